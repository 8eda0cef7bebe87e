#pragma once

// Deterministic reformulation of the compressed chance constraints.
//
// Each compressed constraint P(a·θ₀' + R·u' ≤ β(p)) ≥ 1−ε, with θ₀ Gaussian and
// the window feature u a Gaussian mixture, splits per mixture component j into
//   Φ⁻¹(y_j)·√(a²σ_θ² + R²σ_j²) + a·μ_θ + R·μ_j ≤ β(p),   Σ_j π_j y_j ≥ 1−ε.
// Substituting Φ⁻¹(y) = exp(ln Φ⁻¹(y)) ≤ exp(λ_n y + γ_n) and R = e^ρ gives
// rows that are smooth and convex in (p, ρ, y). The exp PWL of R is handled by
// enumerating its segments, one subproblem per segment, plus an R = 0 problem.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hvacreg/compress.hpp"
#include "hvacreg/errors.hpp"
#include "hvacreg/probmodel.hpp"
#include "hvacreg/pwl.hpp"
#include "hvacreg/thermal.hpp"

namespace hvacreg {

struct MarketPrices {
  double energy = 40.0;          ///< η [$/MWh]
  double capacity = 30.0;        ///< r_rc [$/MW]
  double mileage = 0.12;         ///< r_m [$/MW per unit mileage]
  double day_ahead_cap = 1.0;    ///< R_da [MW]

  void validate() const {
    if (!(energy >= 0.0 && capacity >= 0.0 && mileage >= 0.0))
      throw ParameterError("prices: prices must be >= 0");
    if (!(day_ahead_cap >= 0.0)) throw ParameterError("prices: day-ahead capacity must be >= 0");
  }
};

/// η(p − R·s_avg)·1h − (r_rc + r_m·m_avg)·R
inline double expected_cost(const MarketPrices& prices, double s_avg, double m_avg, double p_ha, double r_ha) {
  return prices.energy * (p_ha - r_ha * s_avg) * 1.0 - (prices.capacity + prices.mileage * m_avg) * r_ha;
}

struct Theta0Model {
  double mean = 27.0;
  double std = 0.1;

  void validate() const {
    if (!std::isfinite(mean)) throw ParameterError("theta0 model: mean must be finite");
    if (!(std >= 0.0)) throw ParameterError("theta0 model: std must be >= 0");
  }
};

/// Fitted models for one window: the raw maximum and minimum response features.
struct WindowModels {
  MixtureModel upper;
  MixtureModel lower;
  SampleMoments upper_moments;
  SampleMoments lower_moments;
};

/// Everything the reformulation needs about one operating hour.
struct HourModel {
  std::vector<WindowModels> windows;
  Theta0Model theta0;
  double s_avg = 0.0;
  double m_avg = 0.0;
};

struct ComponentData {
  double weight = 1.0;
  double mu_theta = 0.0;  ///< signed mean of the θ₀ entry of ω
  double mu_u = 0.0;      ///< signed mean of the feature entry of ω
  double sd_theta = 0.0;
  double sd_u = 0.0;
};

struct DeterministicConstraint {
  std::size_t index = 0;  ///< position in the compressed constraint list
  CompressedConstraint parent;
  double a = 1.0;  ///< coefficient of θ₀ in α
  std::vector<ComponentData> components;
};

inline DeterministicConstraint reformulate_gaussian_component(const CompressedConstraint& cc, std::size_t index,
                                                              const HourModel& model) {
  if (cc.tau >= model.windows.size())
    throw ConfigurationError("reformulate: no mixture for window " + std::to_string(cc.tau));
  const auto& mix = cc.uses_upper_feature() ? model.windows[cc.tau].upper : model.windows[cc.tau].lower;
  if (mix.components.empty())
    throw ConfigurationError("reformulate: empty mixture for window " + std::to_string(cc.tau));
  const double sgn = cc.omega_sign();
  DeterministicConstraint d;
  d.index = index;
  d.parent = cc;
  d.a = cc.a_in_b;
  for (const auto& c : mix.components) {
    d.components.push_back(
        ComponentData{c.weight, sgn * model.theta0.mean, sgn * c.mean, model.theta0.std, c.std});
  }
  return d;
}

/// Mixture probability P(αᵀω ≤ β) via the per-component decomposition.
inline double constraint_probability(const DeterministicConstraint& d, double p_ha, double r_ha) {
  const double beta = d.parent.beta(p_ha);
  double prob = 0.0;
  for (const auto& c : d.components) {
    const double mean = d.a * c.mu_theta + r_ha * c.mu_u;
    const double sd = std::hypot(d.a * c.sd_theta, r_ha * c.sd_u);
    double pj;
    if (sd > 0.0)
      pj = normal_cdf((beta - mean) / sd);
    else
      pj = mean <= beta ? 1.0 : 0.0;
    prob += c.weight * pj;
  }
  return prob;
}

// ---------------------------------------------------------------------------

enum class Method { proposed, b1_gaussian, b2_moment };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::proposed: return "proposed";
    case Method::b1_gaussian: return "b1";
    case Method::b2_moment: return "b2";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "proposed") return Method::proposed;
  if (s == "b1" || s == "B1" || s == "b1_gaussian") return Method::b1_gaussian;
  if (s == "b2" || s == "B2" || s == "b2_moment") return Method::b2_moment;
  throw ParameterError("unknown method '" + s + "' (expected proposed, b1 or b2)");
}

/// B1: Φ⁻¹(1−ε); B2: √((1−ε)/ε).
inline double benchmark_multiplier(Method m, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ParameterError("epsilon must be in (0, 1)");
  if (m == Method::b1_gaussian) return normal_quantile(1.0 - epsilon);
  if (m == Method::b2_moment) return std::sqrt((1.0 - epsilon) / epsilon);
  throw ParameterError("benchmark_multiplier: not a benchmark method");
}

enum class SubproblemKind { segment, zero_capacity, benchmark };

struct FormulationOptions {
  double epsilon = 0.05;
  std::size_t lnq_pieces = 10;
  std::size_t exp_pieces = 50;
  double y_min = 0.5;
  double y_max = 1.0 - 1e-6;
  std::optional<double> rho_lo;
  std::optional<double> rho_hi;

  void validate() const {
    if (!(epsilon > 0.0 && epsilon < 0.5)) throw ParameterError("epsilon must be in (0, 0.5)");
    if (lnq_pieces < 1 || exp_pieces < 1) throw ParameterError("PWL piece counts must be >= 1");
    if (!(y_min >= 0.5 && y_max > kPhiOne && y_max < 1.0 && y_min < y_max))
      throw ParameterError("y bounds must satisfy 0.5 <= y_min < y_max < 1 and y_max > Phi(1)");
  }
};

struct SubproblemSpec {
  Method method = Method::proposed;
  SubproblemKind kind = SubproblemKind::segment;
  int segment = -1;
  // Segment data (kind == segment): ρ ∈ [rho_lo, rho_hi], R = r_slope·ρ + r_intercept.
  double rho_lo = 0.0;
  double rho_hi = 0.0;
  double r_slope = 0.0;
  double r_intercept = 0.0;
  double norm_scale = 1.0;  ///< multiplies e^ρ inside the norm so it dominates the chord
  PwlFunction lnq;
  double epsilon = 0.05;
  double y_min = 0.5;
  double y_max = 1.0 - 1e-6;
  double kappa = 0.0;  ///< benchmark multiplier
  double r_cap = 0.0;  ///< min(R_da, (p_max − p_min)/2)
  BuildingParams building;
  MarketPrices prices;
  double s_avg = 0.0;
  double m_avg = 0.0;
  std::vector<DeterministicConstraint> rows;
  bool flagged_infeasible = false;
  std::string note;

  double capacity_at(double rho) const { return r_slope * rho + r_intercept; }
  std::size_t num_components() const { return rows.empty() ? 0 : rows.front().components.size(); }
  /// Smooth rows: one per (constraint, component, ln Φ⁻¹ piece) or one per constraint for benchmarks.
  std::size_t cone_rows() const {
    if (kind == SubproblemKind::benchmark) return rows.size();
    std::size_t n = 0;
    for (const auto& r : rows) n += r.components.size() * lnq.num_lines();
    return n;
  }
  std::size_t probability_rows() const { return kind == SubproblemKind::benchmark ? 0 : rows.size(); }
  /// Objective = obj_p·p + obj_r·R (+ constant).
  double obj_p() const { return prices.energy; }
  double obj_r() const { return -(prices.energy * s_avg + prices.capacity + prices.mileage * m_avg); }
};

/// Default ρ range [ln max(1e−3·R_da, 1e−6), ln min(R_da, (p_max − p_min)/2)].
inline std::pair<double, double> default_rho_range(const BuildingParams& b, const MarketPrices& prices) {
  const double cap = std::min(prices.day_ahead_cap, 0.5 * (b.power_max - b.power_min));
  return {std::log(std::max(1e-3 * prices.day_ahead_cap, 1e-6)), std::log(cap)};
}

namespace detail {

inline SubproblemSpec base_spec(Method method, const BuildingParams& building, const MarketPrices& prices,
                                const HourModel& model, double epsilon) {
  SubproblemSpec s;
  s.method = method;
  s.epsilon = epsilon;
  s.building = building;
  s.prices = prices;
  s.s_avg = model.s_avg;
  s.m_avg = model.m_avg;
  s.r_cap = std::min(prices.day_ahead_cap, 0.5 * (building.power_max - building.power_min));
  return s;
}

}  // namespace detail

/// One subproblem per exp-PWL segment (pruned when its R-span exceeds the
/// capacity cap) plus the R = 0 problem, which is always last.
inline std::vector<SubproblemSpec> assemble_subproblems(const std::vector<CompressedConstraint>& constraints,
                                                        const HourModel& model, const MarketPrices& prices,
                                                        const FormulationOptions& opt,
                                                        const BuildingParams& building) {
  opt.validate();
  prices.validate();
  building.validate();
  model.theta0.validate();
  std::vector<DeterministicConstraint> rows;
  rows.reserve(constraints.size());
  for (std::size_t i = 0; i < constraints.size(); ++i)
    rows.push_back(reformulate_gaussian_component(constraints[i], i, model));

  const auto lnq = build_lnq_pwl(opt.lnq_pieces, opt.y_max);
  // Σ π y ≤ y_max for every feasible y; the probability row cannot be met otherwise.
  const bool unreachable = opt.y_max < 1.0 - opt.epsilon;

  auto make = [&](SubproblemKind kind) {
    auto s = detail::base_spec(Method::proposed, building, prices, model, opt.epsilon);
    s.kind = kind;
    s.lnq = lnq;
    s.y_min = opt.y_min;
    s.y_max = opt.y_max;
    s.rows = rows;
    s.flagged_infeasible = unreachable;
    if (unreachable) s.note = "1 - epsilon exceeds the reachable probability bound";
    return s;
  };

  std::vector<SubproblemSpec> out;
  const double cap = std::min(prices.day_ahead_cap, 0.5 * (building.power_max - building.power_min));
  if (cap > 0.0) {
    auto [lo, hi] = default_rho_range(building, prices);
    if (opt.rho_lo) lo = *opt.rho_lo;
    if (opt.rho_hi) hi = *opt.rho_hi;
    if (lo < hi) {
      const auto pwl = build_exp_pwl(opt.exp_pieces, lo, hi);
      for (std::size_t m = 0; m < pwl.num_lines(); ++m) {
        const double a = pwl.breakpoints[m], b = pwl.breakpoints[m + 1];
        if (std::exp(a) > cap * (1.0 + 1e-12)) continue;
        auto s = make(SubproblemKind::segment);
        s.segment = static_cast<int>(m);
        s.rho_lo = a;
        s.rho_hi = b;
        s.r_slope = pwl.slopes[m];
        s.r_intercept = pwl.intercepts[m];
        s.norm_scale = exp_chord_max_ratio(a, b);
        out.push_back(std::move(s));
      }
    }
  }
  out.push_back(make(SubproblemKind::zero_capacity));
  return out;
}

/// Single convex subproblem in (p, R) with κ·√(αᵀΣα) + αᵀμ ≤ β from feature moments.
inline SubproblemSpec assemble_benchmark(Method kind, const std::vector<CompressedConstraint>& constraints,
                                         const HourModel& model, const MarketPrices& prices, double epsilon,
                                         const BuildingParams& building) {
  if (kind == Method::proposed) throw ParameterError("assemble_benchmark: not a benchmark method");
  prices.validate();
  building.validate();
  model.theta0.validate();
  auto s = detail::base_spec(kind, building, prices, model, epsilon);
  s.kind = SubproblemKind::benchmark;
  s.kappa = benchmark_multiplier(kind, epsilon);
  for (std::size_t i = 0; i < constraints.size(); ++i) {
    const auto& cc = constraints[i];
    if (cc.tau >= model.windows.size())
      throw ConfigurationError("benchmark: no moments for window " + std::to_string(cc.tau));
    const auto& mo = cc.uses_upper_feature() ? model.windows[cc.tau].upper_moments : model.windows[cc.tau].lower_moments;
    const double sgn = cc.omega_sign();
    DeterministicConstraint d;
    d.index = i;
    d.parent = cc;
    d.a = cc.a_in_b;
    d.components.push_back(ComponentData{1.0, sgn * model.theta0.mean, sgn * mo.mean, model.theta0.std, mo.std});
    s.rows.push_back(std::move(d));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Direct evaluation of an assembled subproblem (independent of the solver's
// internal program representation).

struct SubproblemPoint {
  double p = 0.0;
  double rho = 0.0;  ///< segment problems
  double r = 0.0;    ///< capacity actually offered
  std::vector<std::vector<double>> y;  ///< [constraint][component]
};

struct SpecResiduals {
  double max_cone = -std::numeric_limits<double>::infinity();         ///< assembled smooth rows
  double max_probability = -std::numeric_limits<double>::infinity();  ///< (1−ε) − Σπy
  double max_bounds = -std::numeric_limits<double>::infinity();       ///< power, cap, y and ρ bounds
  double max_deterministic = -std::numeric_limits<double>::infinity();  ///< Φ⁻¹(y)·norm + mean − β at the offered R
  double min_chance_margin = std::numeric_limits<double>::infinity();   ///< min over constraints of P − (1−ε)

  double max_assembled() const { return std::max({max_cone, max_probability, max_bounds}); }
};

inline SpecResiduals spec_residuals(const SubproblemSpec& s, const SubproblemPoint& x) {
  SpecResiduals r;
  const auto& b = s.building;
  const double R = x.r;
  auto bound = [&](double v) { r.max_bounds = std::max(r.max_bounds, v); };
  bound(b.power_min - (x.p - R));
  bound(x.p + R - b.power_max);
  bound(R - s.prices.day_ahead_cap);
  bound(-R);
  if (s.kind == SubproblemKind::segment) {
    bound(s.rho_lo - x.rho);
    bound(x.rho - s.rho_hi);
  }
  for (std::size_t i = 0; i < s.rows.size(); ++i) {
    const auto& d = s.rows[i];
    const double beta = d.parent.beta(x.p);
    r.min_chance_margin = std::min(r.min_chance_margin, constraint_probability(d, x.p, R) - (1.0 - s.epsilon));
    if (s.kind == SubproblemKind::benchmark) {
      const auto& c = d.components.front();
      const double v = s.kappa * std::hypot(d.a * c.sd_theta, R * c.sd_u) + d.a * c.mu_theta + R * c.mu_u - beta;
      r.max_cone = std::max(r.max_cone, v);
      r.max_deterministic = std::max(r.max_deterministic, v);
      continue;
    }
    double psum = 0.0;
    for (std::size_t j = 0; j < d.components.size(); ++j) {
      const auto& c = d.components[j];
      const double y = x.y[i][j];
      psum += c.weight * y;
      bound(s.y_min - y);
      bound(y - s.y_max);
      const double surrogate = s.kind == SubproblemKind::segment ? std::exp(x.rho) * s.norm_scale : 0.0;
      const double norm = std::hypot(d.a * c.sd_theta, surrogate * c.sd_u);
      const double mean = d.a * c.mu_theta + R * c.mu_u;
      for (std::size_t n = 0; n < s.lnq.num_lines(); ++n)
        r.max_cone = std::max(r.max_cone, std::exp(s.lnq.line(n, y)) * norm + mean - beta);
      const double v = normal_quantile(y) * std::hypot(d.a * c.sd_theta, R * c.sd_u) + mean - beta;
      r.max_deterministic = std::max(r.max_deterministic, v);
    }
    r.max_probability = std::max(r.max_probability, (1.0 - s.epsilon) - psum);
  }
  return r;
}

inline double spec_objective(const SubproblemSpec& s, double p, double r) {
  return expected_cost(s.prices, s.s_avg, s.m_avg, p, r);
}

// ---------------------------------------------------------------------------
// Serialization.

inline nlohmann::ordered_json to_json(const SubproblemSpec& s) {
  nlohmann::ordered_json j;
  j["method"] = to_string(s.method);
  j["kind"] = s.kind == SubproblemKind::segment ? "segment"
              : s.kind == SubproblemKind::zero_capacity ? "zero_capacity"
                                                         : "benchmark";
  j["segment"] = s.segment;
  j["rho_lo"] = s.rho_lo;
  j["rho_hi"] = s.rho_hi;
  j["r_slope"] = s.r_slope;
  j["r_intercept"] = s.r_intercept;
  j["norm_scale"] = s.norm_scale;
  j["epsilon"] = s.epsilon;
  j["y_min"] = s.y_min;
  j["y_max"] = s.y_max;
  j["kappa"] = s.kappa;
  j["r_cap"] = s.r_cap;
  j["lnq"] = {{"slopes", s.lnq.slopes}, {"intercepts", s.lnq.intercepts}, {"breakpoints", s.lnq.breakpoints}};
  j["building"] = {{"heat_capacity", s.building.heat_capacity}, {"heat_transfer", s.building.heat_transfer},
                   {"cop", s.building.cop},   {"comfort_min", s.building.comfort_min},
                   {"comfort_max", s.building.comfort_max}, {"power_min", s.building.power_min},
                   {"power_max", s.building.power_max}};
  j["prices"] = {{"energy", s.prices.energy}, {"capacity", s.prices.capacity},
                 {"mileage", s.prices.mileage}, {"day_ahead_cap", s.prices.day_ahead_cap}};
  j["s_avg"] = s.s_avg;
  j["m_avg"] = s.m_avg;
  j["flagged_infeasible"] = s.flagged_infeasible;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& d : s.rows) {
    nlohmann::ordered_json r;
    r["index"] = d.index;
    r["tau"] = d.parent.tau;
    r["side"] = d.parent.side == Side::upper ? "upper" : "lower";
    r["boundary"] = d.parent.boundary == Boundary::window_start ? "start" : "end";
    r["step"] = d.parent.step;
    r["a"] = d.a;
    r["beta0"] = d.parent.beta0;
    r["beta_p"] = d.parent.beta_p;
    auto comps = nlohmann::ordered_json::array();
    for (const auto& c : d.components)
      comps.push_back({{"weight", c.weight}, {"mu_theta", c.mu_theta}, {"mu_u", c.mu_u},
                       {"sd_theta", c.sd_theta}, {"sd_u", c.sd_u}});
    r["components"] = comps;
    rows.push_back(r);
  }
  j["rows"] = rows;
  return j;
}

/// Big-M mixed-integer form of the proposed hour problem as plain text.
///
/// Grammar (one statement per line, '\' starts a comment):
///   minimize / subject to / bounds / binaries / end   section keywords
///   <name>: <linear expr> <op> <rhs>                   linear row, op ∈ {<=, >=, =}
///   <name>: expnorm(<a2>, <b2>, rho, <lam> y_<i>_<j> + <gam>) + <linear expr> <= <rhs>
///       the smooth term exp(½ ln(a2 + b2·e^{2ρ}) + lam·y + gam)
///   <lo> <= <var> <= <hi>                              variable bounds
/// Segment selection uses binaries z_m with Σ z_m = 1 and R, ρ tied to the
/// selected chord through ±M relaxations.
inline void write_bigm_export(const std::vector<SubproblemSpec>& specs, std::ostream& out, double big_m = 100.0) {
  std::vector<const SubproblemSpec*> segs;
  const SubproblemSpec* any = nullptr;
  for (const auto& s : specs) {
    if (s.kind == SubproblemKind::segment) segs.push_back(&s);
    if (s.kind != SubproblemKind::benchmark) any = &s;
  }
  if (!any) throw ParameterError("export: no proposed subproblems");
  const auto& s0 = *any;
  out << std::setprecision(17);
  out << "\\ hvacreg big-M export: " << segs.size() << " segments, " << s0.rows.size() << " constraints, "
      << s0.num_components() << " components, " << s0.lnq.num_lines() << " lnq lines\n";
  out << "\\ objective constant 0\n";
  out << "minimize\n obj: " << s0.obj_p() << " p + " << s0.obj_r() << " R\n";
  out << "subject to\n";
  if (!segs.empty()) {
    out << " onehot:";
    for (std::size_t m = 0; m < segs.size(); ++m) out << (m ? " + " : " ") << "z_" << segs[m]->segment;
    out << " + z_zero = 1\n";
    for (const auto* s : segs) {
      const int m = s->segment;
      out << " rdef_lo_" << m << ": R - " << s->r_slope << " rho - " << big_m << " z_" << m
          << " >= " << s->r_intercept - big_m << "\n";
      out << " rdef_hi_" << m << ": R - " << s->r_slope << " rho + " << big_m << " z_" << m
          << " <= " << s->r_intercept + big_m << "\n";
      out << " rho_lo_" << m << ": rho - " << big_m << " z_" << m << " >= " << s->rho_lo - big_m << "\n";
      out << " rho_hi_" << m << ": rho + " << big_m << " z_" << m << " <= " << s->rho_hi + big_m << "\n";
    }
    out << " rzero: R + " << big_m << " z_zero <= " << big_m << "\n";
  }
  const double scale = segs.empty() ? 1.0 : segs.front()->norm_scale;
  out << " pmin: p - R >= " << s0.building.power_min << "\n";
  out << " pmax: p + R <= " << s0.building.power_max << "\n";
  out << " rda: R <= " << s0.prices.day_ahead_cap << "\n";
  for (std::size_t i = 0; i < s0.rows.size(); ++i) {
    const auto& d = s0.rows[i];
    for (std::size_t j = 0; j < d.components.size(); ++j) {
      const auto& c = d.components[j];
      const double a2 = d.a * d.a * c.sd_theta * c.sd_theta;
      const double b2 = c.sd_u * c.sd_u * scale * scale;
      for (std::size_t n = 0; n < s0.lnq.num_lines(); ++n) {
        out << " cone_" << i << '_' << j << '_' << n << ": expnorm(" << a2 << ", " << b2 << ", rho, "
            << s0.lnq.slopes[n] << " y_" << i << '_' << j << " + " << s0.lnq.intercepts[n] << ") + " << c.mu_u
            << " R - " << d.parent.beta_p << " p <= " << d.parent.beta0 - d.a * c.mu_theta << "\n";
      }
    }
    out << " prob_" << i << ":";
    for (std::size_t j = 0; j < d.components.size(); ++j)
      out << (j ? " + " : " ") << d.components[j].weight << " y_" << i << '_' << j;
    out << " >= " << 1.0 - s0.epsilon << "\n";
  }
  out << "bounds\n";
  out << " " << s0.building.power_min << " <= p <= " << s0.building.power_max << "\n";
  out << " 0 <= R <= " << s0.r_cap << "\n";
  if (!segs.empty()) out << " " << segs.front()->rho_lo << " <= rho <= " << segs.back()->rho_hi << "\n";
  for (std::size_t i = 0; i < s0.rows.size(); ++i)
    for (std::size_t j = 0; j < s0.rows[i].components.size(); ++j)
      out << " " << s0.y_min << " <= y_" << i << '_' << j << " <= " << s0.y_max << "\n";
  out << "binaries\n";
  for (const auto* s : segs) out << " z_" << s->segment << "\n";
  if (!segs.empty()) out << " z_zero\n";
  out << "end\n";
}

}  // namespace hvacreg
