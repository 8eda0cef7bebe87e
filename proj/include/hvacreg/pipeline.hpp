#pragma once

// End-to-end orchestration: signals → features → mixtures → per-hour
// subproblems → offers → Monte Carlo validation, with on-disk artifacts.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hvacreg/compress.hpp"
#include "hvacreg/config.hpp"
#include "hvacreg/errors.hpp"
#include "hvacreg/parallel.hpp"
#include "hvacreg/probmodel.hpp"
#include "hvacreg/reformulate.hpp"
#include "hvacreg/signals.hpp"
#include "hvacreg/solve.hpp"
#include "hvacreg/thermal.hpp"
#include "hvacreg/validate.hpp"

namespace hvacreg {

namespace fs = std::filesystem;

/// HVACREG_VERBOSITY: 0 silent, 1 progress (default), 2 debug.
inline int verbosity() {
  if (const char* env = std::getenv("HVACREG_VERBOSITY")) {
    try {
      return std::stoi(env);
    } catch (const std::exception&) {
    }
  }
  return 1;
}

inline void log_msg(int level, const std::string& msg) {
  if (verbosity() >= level) std::cerr << "[hvacreg] " << msg << '\n';
}

// ---------------------------------------------------------------------------
// Signals and the fit/holdout split.

inline SignalSet load_signals(const RunConfig& cfg) {
  if (!cfg.signals.csv_path.empty()) return ingest_csv(cfg.signals.csv_path, cfg.signals.cadence_seconds);
  auto p = cfg.signals.params;
  p.cadence_seconds = cfg.signals.cadence_seconds;
  return synthesize(cfg.signals.kind, cfg.signals.seed, cfg.signals.hours, p);
}

struct SignalSplit {
  SignalSet fit;
  SignalSet holdout;
};

/// Seeded shuffle of hour ids; the first ⌈(1−f)·n⌉ fit, the rest are held out.
inline SignalSplit split_signals(const SignalSet& all, double holdout_fraction, std::uint64_t seed) {
  if (all.traces.size() < 2) throw DataError("split: need at least two signal hours");
  std::vector<std::size_t> idx(all.traces.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto by_id = [&](auto a, auto b) { return all.traces[a].id < all.traces[b].id; };
  std::sort(idx.begin(), idx.end(), by_id);
  std::mt19937_64 rng(seed);
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng() % i]);
  auto n_hold = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(idx.size())));
  n_hold = std::clamp<std::size_t>(n_hold, 1, idx.size() - 1);
  SignalSplit s;
  s.fit.source = s.holdout.source = all.source;
  s.fit.cadence_seconds = s.holdout.cadence_seconds = all.cadence_seconds;
  const std::size_t n_fit = idx.size() - n_hold;
  std::vector<std::size_t> fit_idx(idx.begin(), idx.begin() + static_cast<long>(n_fit));
  std::vector<std::size_t> hold_idx(idx.begin() + static_cast<long>(n_fit), idx.end());
  std::sort(fit_idx.begin(), fit_idx.end(), by_id);
  std::sort(hold_idx.begin(), hold_idx.end(), by_id);
  for (auto i : fit_idx) s.fit.traces.push_back(all.traces[i]);
  for (auto i : hold_idx) s.holdout.traces.push_back(all.traces[i]);
  check_holdout_disjoint(s.fit, s.holdout);
  return s;
}

/// Hours-of-day whose circular distance to `hour` is at most `radius`.
inline std::set<int> pool_hours(int hour, int radius) {
  std::set<int> out;
  for (int h = 0; h < 24; ++h) {
    const int d = std::abs(h - hour);
    if (std::min(d, 24 - d) <= radius) out.insert(h);
  }
  return out;
}

inline SignalSet filter_hours(const SignalSet& set, const std::set<int>& hours) {
  SignalSet out;
  out.source = set.source;
  out.cadence_seconds = set.cadence_seconds;
  for (const auto& t : set.traces)
    if (hours.count(t.id.hour)) out.traces.push_back(t);
  return out;
}

// ---------------------------------------------------------------------------
// Fitting.

struct FittedModels {
  std::string config_hash;
  std::size_t num_windows = 0;
  std::size_t num_components = 0;
  std::array<std::vector<WindowModels>, 24> windows;  ///< per hour-of-day
  std::array<double, 24> s_avg{};
  std::array<double, 24> m_avg{};
  std::array<std::size_t, 24> samples{};
  std::vector<std::string> fit_ids;
  std::vector<std::string> holdout_ids;
  UncertaintyFeatures features;  ///< fit-set features (all hours)
};

inline std::string feature_name(int hour, std::size_t tau, bool upper) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "h%02d_t%zu_%s", hour, tau, upper ? "upper" : "lower");
  return buf;
}

inline FittedModels fit_models(const RunConfig& cfg, const SignalSplit& split, std::size_t threads = thread_cap()) {
  cfg.validate();
  FittedModels fm;
  fm.config_hash = config_hash(cfg);
  fm.num_windows = cfg.num_windows;
  fm.num_components = cfg.em.num_components;
  for (const auto& t : split.fit.traces) fm.fit_ids.push_back(t.id.str());
  for (const auto& t : split.holdout.traces) fm.holdout_ids.push_back(t.id.str());
  const auto coeffs = discretize(cfg.building, cfg.signals.cadence_seconds);
  const WindowPlan plan(cfg.num_windows, slots_for_cadence(cfg.signals.cadence_seconds));
  for (const auto& t : split.fit.traces)
    if (t.values.size() != plan.slots) throw DataError("fit: trace " + t.id.str() + " has the wrong length");
  fm.features = extract_features(split.fit, coeffs, plan);

  // Hours-of-day sharing the same pool are fitted once.
  std::map<std::set<int>, std::vector<int>> pools;
  for (int h = 0; h < 24; ++h) pools[pool_hours(h, cfg.pool_radius)].push_back(h);

  for (const auto& [pool, members] : pools) {
    std::vector<const HourFeatures*> rows;
    for (const auto& hf : fm.features.hours)
      if (pool.count(hf.id.hour)) rows.push_back(&hf);
    const int rep = members.front();
    std::vector<WindowModels> wm(plan.num_windows);
    parallel_for(2 * plan.num_windows, threads, [&](std::size_t k) {
      const std::size_t tau = k / 2;
      const bool upper = k % 2 == 0;
      std::vector<double> xs;
      xs.reserve(rows.size());
      for (const auto* r : rows) xs.push_back(upper ? r->u_bar[tau] : r->u_under[tau]);
      MixtureModel m;
      try {
        m = fit_em(xs, cfg.em);
      } catch (const ParameterError& e) {
        throw DataError("fit: insufficient samples for feature " + feature_name(rep, tau, upper) + " (" +
                        std::to_string(xs.size()) + " hours): " + e.what());
      }
      auto mo = xs.size() >= 2 ? sample_moments(xs) : SampleMoments{};
      if (upper) {
        wm[tau].upper = std::move(m);
        wm[tau].upper_moments = mo;
      } else {
        wm[tau].lower = std::move(m);
        wm[tau].lower_moments = mo;
      }
    });
    double s = 0.0, mil = 0.0;
    for (const auto* r : rows) {
      s += r->mean_signal;
      mil += r->mileage;
    }
    const double n = static_cast<double>(rows.size());
    for (int h : members) {
      fm.windows[h] = wm;
      fm.s_avg[h] = s / n;
      fm.m_avg[h] = mil / n;
      fm.samples[h] = rows.size();
    }
  }
  return fm;
}

inline nlohmann::ordered_json to_json(const SampleMoments& m) {
  return {{"mean", m.mean}, {"std", m.std}, {"skewness", m.skewness}, {"excess_kurtosis", m.excess_kurtosis},
          {"n", m.n}};
}

inline SampleMoments moments_from_json(const nlohmann::json& j) {
  SampleMoments m;
  m.mean = j.at("mean").get<double>();
  m.std = j.at("std").get<double>();
  m.skewness = j.value("skewness", 0.0);
  m.excess_kurtosis = j.value("excess_kurtosis", 0.0);
  m.n = j.value("n", std::size_t{0});
  return m;
}

inline void write_text(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << content;
}

/// Layout under `dir`: mixtures/hHH_tT_{upper|lower}.json (2·|T|·24 files),
/// features_windows.csv, features_sidecar.csv, fit_summary.json.
inline void write_fit(const FittedModels& fm, const fs::path& dir) {
  fs::create_directories(dir / "mixtures");
  for (int h = 0; h < 24; ++h) {
    for (std::size_t tau = 0; tau < fm.num_windows; ++tau) {
      for (bool upper : {true, false}) {
        const auto& w = fm.windows[h][tau];
        auto j = to_json(upper ? w.upper : w.lower);
        j["feature"] = feature_name(h, tau, upper);
        j["moments"] = to_json(upper ? w.upper_moments : w.lower_moments);
        j["config_hash"] = fm.config_hash;
        write_text(dir / "mixtures" / (feature_name(h, tau, upper) + ".json"), j.dump(2) + "\n");
      }
    }
  }
  {
    std::ofstream win(dir / "features_windows.csv", std::ios::binary), side(dir / "features_sidecar.csv", std::ios::binary);
    if (!win || !side) throw DataError("cannot write feature cache in " + dir.string());
    write_feature_cache(fm.features, win, side);
  }
  nlohmann::ordered_json s;
  s["schema"] = "hvacreg.fit";
  s["version"] = 1;
  s["config_hash"] = fm.config_hash;
  s["num_windows"] = fm.num_windows;
  s["num_components"] = fm.num_components;
  s["s_avg"] = fm.s_avg;
  s["m_avg"] = fm.m_avg;
  s["samples"] = fm.samples;
  s["fit_ids"] = fm.fit_ids;
  s["holdout_ids"] = fm.holdout_ids;
  write_text(dir / "fit_summary.json", s.dump(2) + "\n");
}

/// Loads fit artifacts and checks they were produced by a configuration with the same hash.
inline FittedModels load_fit(const fs::path& dir, const RunConfig& cfg) {
  const auto summary = dir / "fit_summary.json";
  if (!fs::exists(summary))
    throw ConfigurationError("fit artifacts not found in " + dir.string() + "; run `hvacreg fit` first");
  nlohmann::json s;
  try {
    std::ifstream in(summary);
    s = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError("fit summary unreadable: " + std::string(e.what()));
  }
  if (s.value("schema", "") != "hvacreg.fit") throw ConfigurationError("fit summary: wrong schema");
  FittedModels fm;
  fm.config_hash = s.at("config_hash").get<std::string>();
  const auto want = config_hash(cfg);
  if (fm.config_hash != want)
    throw ConfigurationError("fit artifacts in " + dir.string() + " were produced with config " + fm.config_hash +
                             " but the current config hashes to " + want + "; rerun `hvacreg fit`");
  fm.num_windows = s.at("num_windows").get<std::size_t>();
  fm.num_components = s.at("num_components").get<std::size_t>();
  fm.s_avg = s.at("s_avg").get<std::array<double, 24>>();
  fm.m_avg = s.at("m_avg").get<std::array<double, 24>>();
  fm.samples = s.at("samples").get<std::array<std::size_t, 24>>();
  fm.fit_ids = s.at("fit_ids").get<std::vector<std::string>>();
  fm.holdout_ids = s.at("holdout_ids").get<std::vector<std::string>>();
  for (int h = 0; h < 24; ++h) {
    fm.windows[h].resize(fm.num_windows);
    for (std::size_t tau = 0; tau < fm.num_windows; ++tau) {
      for (bool upper : {true, false}) {
        const auto p = dir / "mixtures" / (feature_name(h, tau, upper) + ".json");
        std::ifstream in(p);
        if (!in) throw ConfigurationError("missing mixture file " + p.string() + "; rerun `hvacreg fit`");
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
          throw ConfigurationError("mixture file " + p.string() + " unreadable: " + e.what());
        }
        auto& w = fm.windows[h][tau];
        (upper ? w.upper : w.lower) = mixture_from_json(j);
        (upper ? w.upper_moments : w.lower_moments) = moments_from_json(j.at("moments"));
      }
    }
  }
  return fm;
}

// ---------------------------------------------------------------------------
// Optimization.

inline HourContext hour_context(const RunConfig& cfg, const HourInputs& in) {
  HourContext ctx;
  ctx.theta_out = in.theta_out;
  ctx.heat_load = in.heat_load;
  ctx.theta0 = in.theta0.mean;
  ctx.slots = slots_for_cadence(cfg.signals.cadence_seconds);
  ctx.validate();
  return ctx;
}

inline HourModel hour_model(const FittedModels& fm, const HourInputs& in) {
  HourModel m;
  m.windows = fm.windows[in.hour];
  m.theta0 = in.theta0;
  m.s_avg = fm.s_avg[in.hour];
  m.m_avg = fm.m_avg[in.hour];
  return m;
}

inline std::vector<CompressedConstraint> hour_constraints(const RunConfig& cfg, const HourInputs& in) {
  const auto coeffs = discretize(cfg.building, cfg.signals.cadence_seconds);
  const auto ctx = hour_context(cfg, in);
  const WindowPlan plan(cfg.num_windows, ctx.slots);
  return build_constraints(coeffs, ctx, plan, cfg.building.comfort_min, cfg.building.comfort_max);
}

inline std::vector<SubproblemSpec> hour_specs(const RunConfig& cfg, const FittedModels& fm, const HourInputs& in,
                                              Method method) {
  if (fm.num_windows != cfg.num_windows) throw ConfigurationError("fit artifacts use a different window count");
  const auto cons = hour_constraints(cfg, in);
  const auto model = hour_model(fm, in);
  if (method == Method::proposed) return assemble_subproblems(cons, model, in.prices, cfg.formulation, cfg.building);
  return {assemble_benchmark(method, cons, model, in.prices, cfg.formulation.epsilon, cfg.building)};
}

inline std::vector<SolveResult> optimize_day(const RunConfig& cfg, const FittedModels& fm, Method method,
                                             std::size_t threads = thread_cap()) {
  const auto profile = cfg.day_profile();
  std::vector<HourProblem> probs;
  for (const auto& in : profile) probs.push_back({in.hour, hour_specs(cfg, fm, in, method)});
  auto out = solve_day(probs, cfg.solver, threads);
  for (auto& r : out) r.method = method;
  return out;
}

// ---------------------------------------------------------------------------
// Offer files: `# config_hash=<h> method=<m> epsilon=<e>` then the offer CSV.

struct OfferFile {
  std::string config_hash;
  Method method = Method::proposed;
  double epsilon = 0.0;
  std::vector<SolveResult> offers;
};

inline void write_offers(const OfferFile& f, std::ostream& out) {
  out << "# config_hash=" << f.config_hash << " method=" << to_string(f.method) << " epsilon=" << f.epsilon << '\n';
  out << kOfferCsvHeader << '\n' << std::setprecision(17);
  for (const auto& r : f.offers) write_offer_row(out, r);
}

inline OfferFile read_offers(std::istream& in) {
  OfferFile f;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw ParseError("offers: missing config header line", 1);
  std::stringstream hs(line.substr(2));
  std::string kv;
  bool have_hash = false, have_method = false, have_eps = false;
  while (hs >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ParseError("offers: malformed header field '" + kv + "'", 1);
    const auto k = kv.substr(0, eq), v = kv.substr(eq + 1);
    try {
      if (k == "config_hash") {
        f.config_hash = v;
        have_hash = true;
      } else if (k == "method") {
        f.method = parse_method(v);
        have_method = true;
      } else if (k == "epsilon") {
        f.epsilon = std::stod(v);
        have_eps = true;
      }
    } catch (const std::exception&) {
      throw ParseError("offers: bad header value '" + kv + "'", 1);
    }
  }
  if (!have_hash || !have_method || !have_eps) throw ParseError("offers: header needs config_hash, method, epsilon", 1);
  if (!std::getline(in, line) || detail::trim(line) != kOfferCsvHeader)
    throw ParseError(std::string("offers: expected header '") + kOfferCsvHeader + "'", 2);
  std::size_t ln = 2;
  while (std::getline(in, line)) {
    ++ln;
    line = detail::trim(line);
    if (line.empty()) continue;
    std::vector<std::string> c;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) c.push_back(cell);
    if (c.size() != 7) throw ParseError("offers: expected 7 fields", ln);
    SolveResult r;
    try {
      r.hour = std::stoi(c[0]);
      r.p_ha = std::stod(c[1]);
      r.r_ha = std::stod(c[2]);
      r.objective = std::stod(c[3]);
      r.status = parse_solve_status(c[4]);
      r.segment = std::stoi(c[5]);
      r.wall_ms = std::stod(c[6]);
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception&) {
      throw ParseError("offers: bad field", ln);
    }
    r.method = f.method;
    f.offers.push_back(r);
  }
  return f;
}

inline OfferFile read_offers(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigurationError("offer file not found: " + p.string());
  return read_offers(in);
}

// ---------------------------------------------------------------------------
// Validation.

/// Holdout traces for the configured source, checked against the ids recorded at fit time.
inline SignalSet holdout_signals(const RunConfig& cfg, const FittedModels& fm) {
  auto split = split_signals(load_signals(cfg), cfg.holdout_fraction, cfg.split_seed);
  std::vector<std::string> ids;
  for (const auto& t : split.holdout.traces) ids.push_back(t.id.str());
  if (!fm.holdout_ids.empty() && ids != fm.holdout_ids)
    throw DataError("holdout traces differ from those recorded at fit time");
  std::set<std::string> fit_ids(fm.fit_ids.begin(), fm.fit_ids.end());
  for (const auto& id : ids)
    if (fit_ids.count(id)) throw DataError("holdout trace " + id + " was used for fitting");
  return split.holdout;
}

/// Validates each hour's offer on the holdout traces from the same hour-of-day pool.
inline std::vector<ViolationReport> validate_day(const RunConfig& cfg, const std::vector<SolveResult>& offers,
                                                 const SignalSet& holdout, std::size_t threads = thread_cap()) {
  const auto profile = cfg.day_profile();
  std::map<int, HourInputs> by_hour;
  for (const auto& in : profile) by_hour[in.hour] = in;
  const auto coeffs = discretize(cfg.building, cfg.signals.cadence_seconds);
  std::vector<ViolationReport> out(offers.size());
  parallel_for(offers.size(), threads, [&](std::size_t i) {
    const auto& o = offers[i];
    auto it = by_hour.find(o.hour);
    if (it == by_hour.end()) throw DataError("offer for hour " + std::to_string(o.hour) + " not in the day profile");
    const auto hold = filter_hours(holdout, pool_hours(o.hour, cfg.pool_radius));
    if (hold.traces.empty()) throw DataError("no holdout traces for hour " + std::to_string(o.hour));
    ValidationOptions vo;
    vo.theta0 = it->second.theta0;
    vo.seed = cfg.validation_seed + static_cast<std::uint64_t>(o.hour);
    const double p = o.ok() ? o.p_ha : 0.0;
    const double r = o.ok() ? o.r_ha : 0.0;
    out[i] = estimate_violation(p, r, coeffs, hour_context(cfg, it->second), cfg.building, it->second.prices, hold, vo);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Sensitivity sweeps.

enum class SweepAxis { epsilon, num_windows, num_exp_pieces };

inline SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "epsilon") return SweepAxis::epsilon;
  if (s == "num_windows") return SweepAxis::num_windows;
  if (s == "num_exp_pieces") return SweepAxis::num_exp_pieces;
  throw ParameterError("sweep: unknown axis '" + s + "' (epsilon | num_windows | num_exp_pieces)");
}

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::epsilon: return "epsilon";
    case SweepAxis::num_windows: return "num_windows";
    case SweepAxis::num_exp_pieces: return "num_exp_pieces";
  }
  return "?";
}

struct SweepRow {
  SweepAxis axis = SweepAxis::epsilon;
  double value = 0.0;
  Method method = Method::proposed;
  double total_cost = 0.0;
  double max_violation = 0.0;
  double solve_ms = 0.0;
  double exp_pwl_gap = 0.0;
  std::size_t infeasible_hours = 0;
};

inline constexpr const char* kSweepCsvHeader =
    "axis,value,method,total_cost,max_violation,solve_ms,exp_pwl_gap,infeasible_hours";

/// Refits only when the axis changes the compression plan; the same split is used throughout.
inline std::vector<SweepRow> run_sweep(const RunConfig& base, SweepAxis axis, const std::vector<double>& values,
                                       const std::vector<Method>& methods, bool with_validation = true,
                                       std::size_t threads = thread_cap()) {
  if (values.empty()) throw ParameterError("sweep: no values");
  const auto split = split_signals(load_signals(base), base.holdout_fraction, base.split_seed);
  std::optional<FittedModels> shared;
  if (axis != SweepAxis::num_windows) shared = fit_models(base, split, threads);
  std::vector<SweepRow> rows;
  for (double v : values) {
    RunConfig cfg = base;
    switch (axis) {
      case SweepAxis::epsilon: cfg.formulation.epsilon = v; break;
      case SweepAxis::num_windows:
        if (v < 1 || v != std::floor(v)) throw ParameterError("sweep: num_windows values must be positive integers");
        cfg.num_windows = static_cast<std::size_t>(v);
        break;
      case SweepAxis::num_exp_pieces:
        if (v < 1 || v != std::floor(v)) throw ParameterError("sweep: num_exp_pieces values must be positive integers");
        cfg.formulation.exp_pieces = static_cast<std::size_t>(v);
        break;
    }
    cfg.validate();
    const FittedModels fm = shared ? *shared : fit_models(cfg, split, threads);
    const auto prof = cfg.day_profile();
    auto [lo, hi] = default_rho_range(cfg.building, prof.front().prices);
    if (cfg.formulation.rho_lo) lo = *cfg.formulation.rho_lo;
    if (cfg.formulation.rho_hi) hi = *cfg.formulation.rho_hi;
    const double gap = exp_pwl_gap(build_exp_pwl(cfg.formulation.exp_pieces, lo, hi)).max_abs;
    for (Method m : methods) {
      log_msg(1, "sweep " + to_string(axis) + "=" + std::to_string(v) + " method=" + to_string(m));
      const auto offers = optimize_day(cfg, fm, m, threads);
      SweepRow r;
      r.axis = axis;
      r.value = v;
      r.method = m;
      r.total_cost = total_cost(offers);
      r.exp_pwl_gap = gap;
      for (const auto& o : offers) {
        r.solve_ms += o.wall_ms;
        r.infeasible_hours += o.ok() ? 0 : 1;
      }
      if (with_validation) {
        for (const auto& rep : validate_day(cfg, offers, split.holdout, threads))
          r.max_violation = std::max(r.max_violation, rep.max_violation);
      }
      rows.push_back(r);
    }
  }
  return rows;
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out) {
  out << kSweepCsvHeader << '\n' << std::setprecision(12);
  for (const auto& r : rows)
    out << to_string(r.axis) << ',' << r.value << ',' << to_string(r.method) << ',' << r.total_cost << ','
        << r.max_violation << ',' << r.solve_ms << ',' << r.exp_pwl_gap << ',' << r.infeasible_hours << '\n';
}

}  // namespace hvacreg
