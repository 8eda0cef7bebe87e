#pragma once

// Monte Carlo assessment of offers on held-out signal traces.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hvacreg/errors.hpp"
#include "hvacreg/reformulate.hpp"
#include "hvacreg/signals.hpp"
#include "hvacreg/solve.hpp"
#include "hvacreg/thermal.hpp"

namespace hvacreg {

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

/// Wilson score interval for k successes out of n (z = 1.96 for 95%).
inline Interval wilson_interval(std::size_t k, std::size_t n, double z = 1.959963984540054) {
  if (n == 0) throw ParameterError("wilson_interval: n must be > 0");
  const double nn = static_cast<double>(n);
  const double ph = static_cast<double>(k) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double centre = (ph + z2 / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(ph * (1.0 - ph) / nn + z2 / (4.0 * nn * nn)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

/// Throws if any hour id is in both sets.
inline void check_holdout_disjoint(const SignalSet& fit, const SignalSet& holdout) {
  std::set<HourId> ids;
  for (const auto& t : fit.traces) ids.insert(t.id);
  for (const auto& t : holdout.traces)
    if (ids.count(t.id)) throw DataError("holdout trace " + t.id.str() + " also appears in the fit set");
}

struct ViolationReport {
  std::size_t samples = 0;
  double max_violation = 0.0;  ///< max over steps and sides of the per-step violation frequency
  Interval wilson;             ///< for max_violation
  std::size_t worst_step = 0;
  Side worst_side = Side::upper;
  double any_violation_rate = 0.0;  ///< fraction of traces violating at some step
  std::size_t device_limit_violations = 0;
  double mean_cost = 0.0;
  double cost_stderr = 0.0;
};

struct ValidationOptions {
  Theta0Model theta0;
  std::uint64_t seed = 2024;
  double device_tol = 1e-9;
};

/// Realized cost of one trace: Σ_l η·(p − R·s_l)·Δl − (r_rc + r_m·mileage)·R.
inline double realized_cost(double p_ha, double r_ha, const MarketPrices& prices, const SignalTrace& trace,
                            double step_seconds) {
  const double dt = step_seconds / 3600.0;
  double energy = 0.0;
  for (double s : trace.values) energy += (p_ha - r_ha * s) * dt;
  return prices.energy * energy - (prices.capacity + prices.mileage * mileage(trace)) * r_ha;
}

/// Simulates every holdout trace at 2-second resolution from θ₀ drawn from the
/// θ₀ model. The same θ₀ draws are used for every offer given the seed.
inline ViolationReport estimate_violation(double p_ha, double r_ha, const ThermalCoeffs& c, HourContext ctx,
                                          const BuildingParams& building, const MarketPrices& prices,
                                          const SignalSet& holdout, const ValidationOptions& opt = {}) {
  if (holdout.traces.empty()) throw ParameterError("estimate_violation: empty holdout");
  if (!(r_ha >= 0.0)) throw ParameterError("estimate_violation: R must be >= 0");
  const std::size_t L = holdout.traces.front().values.size();
  ctx.slots = L;
  std::vector<std::size_t> up(L + 1, 0), lo(L + 1, 0);
  ViolationReport rep;
  rep.samples = holdout.traces.size();
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::size_t any = 0;
  double csum = 0.0, csq = 0.0;
  for (const auto& tr : holdout.traces) {
    if (tr.values.size() != L) throw DataError("estimate_violation: holdout traces differ in length");
    const double z = normal(rng);
    ctx.theta0 = opt.theta0.mean + opt.theta0.std * z;
    double theta = ctx.theta0;
    bool violated = false;
    for (std::size_t l = 1; l <= L; ++l) {
      const double s = tr.values[l - 1];
      const double pw = p_ha - r_ha * s;
      if (pw < building.power_min - opt.device_tol || pw > building.power_max + opt.device_tol)
        ++rep.device_limit_violations;
      theta = c.a_in * theta + c.a_out * ctx.theta_out + c.a_h * ctx.heat_load + c.a_q * pw;
      if (theta > building.comfort_max) {
        ++up[l];
        violated = true;
      }
      if (theta < building.comfort_min) {
        ++lo[l];
        violated = true;
      }
    }
    any += violated ? 1 : 0;
    const double cost = realized_cost(p_ha, r_ha, prices, tr, c.step_seconds);
    csum += cost;
    csq += cost * cost;
  }
  const double n = static_cast<double>(rep.samples);
  std::size_t worst = 0;
  for (std::size_t l = 1; l <= L; ++l) {
    if (up[l] > worst) {
      worst = up[l];
      rep.worst_step = l;
      rep.worst_side = Side::upper;
    }
    if (lo[l] > worst) {
      worst = lo[l];
      rep.worst_step = l;
      rep.worst_side = Side::lower;
    }
  }
  rep.max_violation = static_cast<double>(worst) / n;
  rep.wilson = wilson_interval(worst, rep.samples);
  rep.any_violation_rate = static_cast<double>(any) / n;
  rep.mean_cost = csum / n;
  const double var = std::max(0.0, csq / n - rep.mean_cost * rep.mean_cost);
  rep.cost_stderr = rep.samples > 1 ? std::sqrt(var * n / (n - 1.0) / n) : 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Method comparison.

struct MethodRun {
  Method method = Method::proposed;
  double epsilon = 0.05;
  std::vector<SolveResult> offers;
  std::vector<ViolationReport> validation;  ///< per hour, same order as offers
};

struct ComparisonRow {
  Method method = Method::proposed;
  double epsilon = 0.0;
  double total_cost = 0.0;
  double max_violation = 0.0;
  double max_violation_upper = 0.0;  ///< Wilson upper bound at the worst hour
  double solve_ms = 0.0;
  std::size_t infeasible_hours = 0;
  bool exceeds_epsilon = false;  ///< empirical violation above ε
};

inline std::vector<ComparisonRow> compare_methods(const std::vector<MethodRun>& runs) {
  std::vector<ComparisonRow> rows;
  for (const auto& run : runs) {
    ComparisonRow r;
    r.method = run.method;
    r.epsilon = run.epsilon;
    for (const auto& o : run.offers) {
      r.solve_ms += o.wall_ms;
      if (o.ok())
        r.total_cost += o.objective;
      else
        ++r.infeasible_hours;
    }
    for (const auto& v : run.validation) {
      if (v.max_violation >= r.max_violation) {
        r.max_violation = v.max_violation;
        r.max_violation_upper = std::max(r.max_violation_upper, v.wilson.hi);
      }
    }
    r.exceeds_epsilon = r.max_violation > run.epsilon;
    rows.push_back(r);
  }
  return rows;
}

inline constexpr const char* kReportCsvHeader = "method,epsilon,total_cost,max_violation,solve_ms";

inline void write_report_csv(const std::vector<ComparisonRow>& rows, std::ostream& out) {
  out << kReportCsvHeader << '\n';
  for (const auto& r : rows)
    out << to_string(r.method) << ',' << r.epsilon << ',' << r.total_cost << ',' << r.max_violation << ','
        << r.solve_ms << '\n';
}

inline nlohmann::ordered_json to_json(const ViolationReport& v) {
  return {{"samples", v.samples},
          {"max_violation", v.max_violation},
          {"wilson_lo", v.wilson.lo},
          {"wilson_hi", v.wilson.hi},
          {"worst_step", v.worst_step},
          {"worst_side", v.worst_side == Side::upper ? "upper" : "lower"},
          {"any_violation_rate", v.any_violation_rate},
          {"device_limit_violations", v.device_limit_violations},
          {"mean_cost", v.mean_cost},
          {"cost_stderr", v.cost_stderr}};
}

inline nlohmann::ordered_json comparison_json(const std::vector<MethodRun>& runs,
                                               const std::vector<ComparisonRow>& rows) {
  nlohmann::ordered_json j;
  j["schema"] = "hvacreg.report";
  j["version"] = 1;
  auto arr = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < runs.size(); ++k) {
    nlohmann::ordered_json e;
    e["method"] = to_string(rows[k].method);
    e["epsilon"] = rows[k].epsilon;
    e["total_cost"] = rows[k].total_cost;
    e["max_violation"] = rows[k].max_violation;
    e["max_violation_wilson_hi"] = rows[k].max_violation_upper;
    e["solve_ms"] = rows[k].solve_ms;
    e["infeasible_hours"] = rows[k].infeasible_hours;
    e["exceeds_epsilon"] = rows[k].exceeds_epsilon;
    auto hours = nlohmann::ordered_json::array();
    for (std::size_t h = 0; h < runs[k].offers.size(); ++h) {
      nlohmann::ordered_json hj;
      hj["hour"] = runs[k].offers[h].hour;
      hj["status"] = to_string(runs[k].offers[h].status);
      hj["p_ha"] = runs[k].offers[h].p_ha;
      hj["R_ha"] = runs[k].offers[h].r_ha;
      hj["objective"] = runs[k].offers[h].ok() ? nlohmann::ordered_json(runs[k].offers[h].objective)
                                               : nlohmann::ordered_json(nullptr);
      if (h < runs[k].validation.size()) hj["validation"] = to_json(runs[k].validation[h]);
      hours.push_back(hj);
    }
    e["hours"] = hours;
    arr.push_back(e);
  }
  j["runs"] = arr;
  return j;
}

}  // namespace hvacreg
