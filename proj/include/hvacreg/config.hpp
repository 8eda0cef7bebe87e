#pragma once

// Run configuration: JSON file + flag overrides on top of built-in defaults,
// plus the per-hour day profile (weather, initial temperature, prices).

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hvacreg/barrier.hpp"
#include "hvacreg/errors.hpp"
#include "hvacreg/probmodel.hpp"
#include "hvacreg/reformulate.hpp"
#include "hvacreg/signals.hpp"
#include "hvacreg/thermal.hpp"

namespace hvacreg {

struct HourInputs {
  int hour = 0;
  double theta_out = 30.0;
  double heat_load = 5.5;
  Theta0Model theta0;
  MarketPrices prices;
};

/// Hot-day default: outdoor 27–35 °C peaking mid-afternoon, internal and solar
/// gains following the same curve, evening-peaking energy prices.
inline std::vector<HourInputs> default_day_profile() {
  std::vector<HourInputs> out;
  for (int h = 0; h < 24; ++h) {
    const double w = 2.0 * std::numbers::pi / 24.0;
    HourInputs in;
    in.hour = h;
    in.theta_out = 31.0 + 4.0 * std::sin(w * (h - 9));
    in.heat_load = 5.5 + 1.0 * std::sin(w * (h - 8));
    in.theta0 = {27.0, 0.1};
    in.prices.energy = 40.0 + 20.0 * std::sin(w * (h - 12));
    in.prices.capacity = 30.0;
    in.prices.mileage = 0.125 + 0.025 * std::sin(w * (h - 14));
    in.prices.day_ahead_cap = 1.0;
    out.push_back(in);
  }
  return out;
}

inline constexpr const char* kProfileCsvHeader =
    "hour,theta_out,heat_load,theta0_mean,theta0_std,energy_price,capacity_price,mileage_price,day_ahead_cap";

inline std::vector<HourInputs> read_day_profile(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != kProfileCsvHeader)
    throw ParseError(std::string("day profile: expected header '") + kProfileCsvHeader + "'", 1);
  std::vector<HourInputs> out;
  std::size_t ln = 1;
  while (std::getline(in, line)) {
    ++ln;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t pos = 0;
        v.push_back(std::stod(cell, &pos));
        if (detail::trim(cell.substr(pos)).size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError("day profile: bad number '" + cell + "'", ln);
      }
    }
    if (v.size() != 9) throw ParseError("day profile: expected 9 fields", ln);
    HourInputs h;
    h.hour = static_cast<int>(v[0]);
    if (h.hour < 0 || h.hour > 23 || v[0] != h.hour) throw ParseError("day profile: hour must be 0..23", ln);
    h.theta_out = v[1];
    h.heat_load = v[2];
    h.theta0 = {v[3], v[4]};
    h.prices = {v[5], v[6], v[7], v[8]};
    try {
      h.theta0.validate();
      h.prices.validate();
    } catch (const ParameterError& e) {
      throw ParseError(std::string("day profile: ") + e.what(), ln);
    }
    out.push_back(h);
  }
  if (out.empty()) throw DataError("day profile: no hours");
  return out;
}

inline void write_day_profile(const std::vector<HourInputs>& prof, std::ostream& out) {
  out << kProfileCsvHeader << '\n' << std::setprecision(17);
  for (const auto& h : prof)
    out << h.hour << ',' << h.theta_out << ',' << h.heat_load << ',' << h.theta0.mean << ',' << h.theta0.std << ','
        << h.prices.energy << ',' << h.prices.capacity << ',' << h.prices.mileage << ',' << h.prices.day_ahead_cap
        << '\n';
}

struct SignalSource {
  std::string csv_path;  ///< when set, signals are ingested from this file
  double cadence_seconds = 2.0;
  SynthKind kind = SynthKind::bimodal_burst;
  std::uint64_t seed = 42;
  std::size_t hours = 715;
  SynthParams params;
};

struct RunConfig {
  BuildingParams building;
  std::size_t num_windows = 10;
  EmOptions em;
  FormulationOptions formulation;
  SignalSource signals;
  std::string profile_path;  ///< empty: built-in day profile
  double holdout_fraction = 0.3;
  std::uint64_t split_seed = 11;
  int pool_radius = 12;  ///< hours-of-day within this circular distance share fitted models
  SolverConfig solver;
  std::uint64_t validation_seed = 2024;
  std::string output_dir = "hvacreg_out";
  Method method = Method::proposed;

  void validate() const {
    building.validate();
    if (num_windows < 1) throw ConfigurationError("config: num_windows must be >= 1");
    const auto slots = slots_for_cadence(signals.cadence_seconds);
    if (slots % num_windows != 0)
      throw ConfigurationError("config: " + std::to_string(slots) + " slots per hour not divisible by num_windows " +
                               std::to_string(num_windows));
    if (em.num_components < 1) throw ConfigurationError("config: num_components must be >= 1");
    formulation.validate();
    solver.validate();
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
      throw ConfigurationError("config: holdout_fraction must be in (0, 1)");
    if (pool_radius < 0) throw ConfigurationError("config: pool_radius must be >= 0");
    if (!signals.csv_path.empty() && !std::ifstream(signals.csv_path))
      throw ConfigurationError("config: signal file not found: " + signals.csv_path);
    if (!profile_path.empty() && !std::ifstream(profile_path))
      throw ConfigurationError("config: profile file not found: " + profile_path);
  }

  std::vector<HourInputs> day_profile() const {
    if (profile_path.empty()) return default_day_profile();
    std::ifstream in(profile_path);
    return read_day_profile(in);
  }
};

// ---------------------------------------------------------------------------
// JSON. Every key is optional; absent keys keep their current value.

namespace detail {

template <class T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigurationError("config: '" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ConfigurationError("config: unknown key '" + where + "." + k + "'");
  }
}

}  // namespace detail

inline void apply_json(RunConfig& c, const nlohmann::json& j) {
  using detail::check_keys;
  using detail::get_if;
  check_keys(j, {"building", "num_windows", "mixture", "formulation", "signals", "profile", "holdout_fraction",
                 "split_seed", "pool_radius", "solver", "validation_seed", "output_dir", "method"},
             "");
  if (j.contains("building")) {
    const auto& b = j["building"];
    check_keys(b, {"heat_capacity", "heat_transfer", "cop", "comfort_min", "comfort_max", "power_min", "power_max"},
               "building");
    get_if(b, "heat_capacity", c.building.heat_capacity);
    get_if(b, "heat_transfer", c.building.heat_transfer);
    get_if(b, "cop", c.building.cop);
    get_if(b, "comfort_min", c.building.comfort_min);
    get_if(b, "comfort_max", c.building.comfort_max);
    get_if(b, "power_min", c.building.power_min);
    get_if(b, "power_max", c.building.power_max);
  }
  get_if(j, "num_windows", c.num_windows);
  if (j.contains("mixture")) {
    const auto& m = j["mixture"];
    check_keys(m, {"num_components", "seed", "tol", "max_iter"}, "mixture");
    get_if(m, "num_components", c.em.num_components);
    get_if(m, "seed", c.em.seed);
    get_if(m, "tol", c.em.tol);
    get_if(m, "max_iter", c.em.max_iter);
  }
  if (j.contains("formulation")) {
    const auto& f = j["formulation"];
    check_keys(f, {"epsilon", "lnq_pieces", "exp_pieces", "y_min", "y_max", "rho_lo", "rho_hi"}, "formulation");
    get_if(f, "epsilon", c.formulation.epsilon);
    get_if(f, "lnq_pieces", c.formulation.lnq_pieces);
    get_if(f, "exp_pieces", c.formulation.exp_pieces);
    get_if(f, "y_min", c.formulation.y_min);
    get_if(f, "y_max", c.formulation.y_max);
    if (f.contains("rho_lo") && !f["rho_lo"].is_null()) c.formulation.rho_lo = f["rho_lo"].get<double>();
    if (f.contains("rho_hi") && !f["rho_hi"].is_null()) c.formulation.rho_hi = f["rho_hi"].get<double>();
  }
  if (j.contains("signals")) {
    const auto& s = j["signals"];
    check_keys(s, {"csv", "cadence_seconds", "kind", "seed", "hours", "synth"}, "signals");
    get_if(s, "csv", c.signals.csv_path);
    get_if(s, "cadence_seconds", c.signals.cadence_seconds);
    c.signals.params.cadence_seconds = c.signals.cadence_seconds;
    if (s.contains("kind")) c.signals.kind = parse_synth_kind(s["kind"].get<std::string>());
    get_if(s, "seed", c.signals.seed);
    get_if(s, "hours", c.signals.hours);
    if (s.contains("synth")) {
      const auto& p = s["synth"];
      check_keys(p,
                 {"level", "mean", "phi", "sigma", "burst_prob", "burst_level", "burst_noise",
                  "burst_negative_fraction", "burst_min_fraction", "burst_max_fraction", "start_date"},
                 "signals.synth");
      auto& q = c.signals.params;
      get_if(p, "level", q.level);
      get_if(p, "mean", q.mean);
      get_if(p, "phi", q.phi);
      get_if(p, "sigma", q.sigma);
      get_if(p, "burst_prob", q.burst_prob);
      get_if(p, "burst_level", q.burst_level);
      get_if(p, "burst_noise", q.burst_noise);
      get_if(p, "burst_negative_fraction", q.burst_negative_fraction);
      get_if(p, "burst_min_fraction", q.burst_min_fraction);
      get_if(p, "burst_max_fraction", q.burst_max_fraction);
      get_if(p, "start_date", q.start_date);
    }
  }
  get_if(j, "profile", c.profile_path);
  get_if(j, "holdout_fraction", c.holdout_fraction);
  get_if(j, "split_seed", c.split_seed);
  get_if(j, "pool_radius", c.pool_radius);
  if (j.contains("solver")) {
    const auto& s = j["solver"];
    check_keys(s,
               {"t0", "growth", "newton_tol", "max_newton_per_centering", "max_newton_total", "ls_alpha", "ls_beta",
                "feasibility_tol", "gap_tol"},
               "solver");
    get_if(s, "t0", c.solver.t0);
    get_if(s, "growth", c.solver.growth);
    get_if(s, "newton_tol", c.solver.newton_tol);
    get_if(s, "max_newton_per_centering", c.solver.max_newton_per_centering);
    get_if(s, "max_newton_total", c.solver.max_newton_total);
    get_if(s, "ls_alpha", c.solver.ls_alpha);
    get_if(s, "ls_beta", c.solver.ls_beta);
    get_if(s, "feasibility_tol", c.solver.feasibility_tol);
    get_if(s, "gap_tol", c.solver.gap_tol);
  }
  get_if(j, "validation_seed", c.validation_seed);
  get_if(j, "output_dir", c.output_dir);
  if (j.contains("method")) c.method = parse_method(j["method"].get<std::string>());
}

inline RunConfig load_config(const std::string& path) {
  RunConfig c;
  std::ifstream in(path);
  if (!in) throw ConfigurationError("config file not found: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError("config: invalid JSON in " + path + ": " + e.what());
  }
  try {
    apply_json(c, j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError(std::string("config: ") + e.what());
  }
  return c;
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["building"] = {{"heat_capacity", c.building.heat_capacity}, {"heat_transfer", c.building.heat_transfer},
                   {"cop", c.building.cop},   {"comfort_min", c.building.comfort_min},
                   {"comfort_max", c.building.comfort_max}, {"power_min", c.building.power_min},
                   {"power_max", c.building.power_max}};
  j["num_windows"] = c.num_windows;
  j["mixture"] = {{"num_components", c.em.num_components}, {"seed", c.em.seed}, {"tol", c.em.tol},
                  {"max_iter", c.em.max_iter}};
  j["formulation"] = {{"epsilon", c.formulation.epsilon},
                      {"lnq_pieces", c.formulation.lnq_pieces},
                      {"exp_pieces", c.formulation.exp_pieces},
                      {"y_min", c.formulation.y_min},
                      {"y_max", c.formulation.y_max},
                      {"rho_lo", c.formulation.rho_lo ? nlohmann::ordered_json(*c.formulation.rho_lo) : nlohmann::ordered_json()},
                      {"rho_hi", c.formulation.rho_hi ? nlohmann::ordered_json(*c.formulation.rho_hi) : nlohmann::ordered_json()}};
  const auto& p = c.signals.params;
  j["signals"] = {{"csv", c.signals.csv_path},
                  {"cadence_seconds", c.signals.cadence_seconds},
                  {"kind", to_string(c.signals.kind)},
                  {"seed", c.signals.seed},
                  {"hours", c.signals.hours},
                  {"synth",
                   {{"level", p.level},
                    {"mean", p.mean},
                    {"phi", p.phi},
                    {"sigma", p.sigma},
                    {"burst_prob", p.burst_prob},
                    {"burst_level", p.burst_level},
                    {"burst_noise", p.burst_noise},
                    {"burst_negative_fraction", p.burst_negative_fraction},
                    {"burst_min_fraction", p.burst_min_fraction},
                    {"burst_max_fraction", p.burst_max_fraction},
                    {"start_date", p.start_date}}}};
  j["profile"] = c.profile_path;
  j["holdout_fraction"] = c.holdout_fraction;
  j["split_seed"] = c.split_seed;
  j["pool_radius"] = c.pool_radius;
  j["solver"] = {{"t0", c.solver.t0},
                 {"growth", c.solver.growth},
                 {"newton_tol", c.solver.newton_tol},
                 {"max_newton_per_centering", c.solver.max_newton_per_centering},
                 {"max_newton_total", c.solver.max_newton_total},
                 {"ls_alpha", c.solver.ls_alpha},
                 {"ls_beta", c.solver.ls_beta},
                 {"feasibility_tol", c.solver.feasibility_tol},
                 {"gap_tol", c.solver.gap_tol}};
  j["validation_seed"] = c.validation_seed;
  j["output_dir"] = c.output_dir;
  j["method"] = to_string(c.method);
  return j;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Hash of everything that defines the problem instance. Risk level, method,
/// PWL sizes, solver settings and output location are excluded so offers from
/// different methods and sweeps over the same data remain comparable.
inline std::string config_hash(const RunConfig& c) {
  auto j = to_json(c);
  j.erase("formulation");
  j.erase("solver");
  j.erase("output_dir");
  j.erase("method");
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(j.dump());
  return os.str();
}

}  // namespace hvacreg
