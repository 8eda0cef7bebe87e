#pragma once

// Solving assembled subproblems: program construction, per-segment barrier
// solves, enumeration over segments and day-level fan-out.

#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hvacreg/barrier.hpp"
#include "hvacreg/parallel.hpp"
#include "hvacreg/reformulate.hpp"

namespace hvacreg {

/// Variable layout of the program built from a subproblem.
struct ProgramLayout {
  int p = 0;
  int rho = -1;  ///< segment problems
  int r = -1;    ///< benchmark problems with positive capacity cap
  int y0 = -1;   ///< first y variable; y of (row i, component j) at y0 + i·J + j
  std::size_t components = 0;

  int y(std::size_t i, std::size_t j) const { return y0 + static_cast<int>(i * components + j); }
};

inline ConvexProgram build_program(const SubproblemSpec& s, ProgramLayout* layout_out = nullptr) {
  ConvexProgram prog;
  ProgramLayout lay;
  const auto& b = s.building;
  const bool segment = s.kind == SubproblemKind::segment;
  const bool benchmark = s.kind == SubproblemKind::benchmark;
  const bool bench_r = benchmark && s.r_cap > 0.0;
  lay.p = 0;
  if (segment) lay.rho = 1;
  if (bench_r) lay.r = 1;
  prog.num_globals = (segment || bench_r) ? 2 : 1;
  const std::size_t J = benchmark ? 0 : s.num_components();
  lay.components = J;
  if (!benchmark) {
    lay.y0 = static_cast<int>(prog.num_globals);
    prog.block_sizes.assign(s.rows.size(), J);
  }
  const auto n = static_cast<Eigen::Index>(prog.num_vars());
  prog.objective = Eigen::VectorXd::Zero(n);
  prog.x0 = Eigen::VectorXd::Zero(n);
  prog.objective[lay.p] = s.obj_p();
  if (segment) prog.objective[lay.rho] = s.obj_r() * s.r_slope;
  if (bench_r) prog.objective[lay.r] = s.obj_r();

  // R as an affine expression: r_coef·x[r_var] + r_const (absent when R ≡ 0).
  int r_var = -1;
  double r_coef = 0.0, r_const = 0.0;
  if (segment) {
    r_var = lay.rho;
    r_coef = s.r_slope;
    r_const = s.r_intercept;
  } else if (bench_r) {
    r_var = lay.r;
    r_coef = 1.0;
  }
  auto add_r = [&](ProgramRow& row, double mult) {
    if (r_var >= 0) {
      row.linear.emplace_back(r_var, mult * r_coef);
      row.constant += mult * r_const;
    }
  };

  // Device limits and capacity cap.
  {
    ProgramRow lo;
    lo.tag = "power_min";
    lo.linear.emplace_back(lay.p, -1.0);
    lo.constant = b.power_min;
    add_r(lo, 1.0);
    prog.rows.push_back(lo);
    ProgramRow hi;
    hi.tag = "power_max";
    hi.linear.emplace_back(lay.p, 1.0);
    hi.constant = -b.power_max;
    add_r(hi, 1.0);
    prog.rows.push_back(hi);
    if (r_var >= 0) {
      ProgramRow cap;
      cap.tag = "day_ahead_cap";
      cap.constant = -s.prices.day_ahead_cap;
      add_r(cap, 1.0);
      prog.rows.push_back(cap);
    }
  }
  if (segment) {
    ProgramRow lo, hi;
    lo.tag = "rho_lo";
    lo.linear.emplace_back(lay.rho, -1.0);
    lo.constant = s.rho_lo;
    hi.tag = "rho_hi";
    hi.linear.emplace_back(lay.rho, 1.0);
    hi.constant = -s.rho_hi;
    prog.rows.push_back(lo);
    prog.rows.push_back(hi);
  }
  if (bench_r) {
    ProgramRow nonneg;
    nonneg.tag = "r_nonneg";
    nonneg.linear.emplace_back(lay.r, -1.0);
    prog.rows.push_back(nonneg);
  }

  for (std::size_t i = 0; i < s.rows.size(); ++i) {
    const auto& d = s.rows[i];
    const double beta0 = d.parent.beta0, beta_p = d.parent.beta_p;
    if (benchmark) {
      const auto& c = d.components.front();
      ProgramRow row;
      row.tag = "chance_" + std::to_string(i);
      row.linear.emplace_back(lay.p, -beta_p);
      row.constant = d.a * c.mu_theta - beta0;
      add_r(row, c.mu_u);
      const double c0sq = d.a * d.a * c.sd_theta * c.sd_theta;
      if (s.kappa != 0.0) {
        if (bench_r && c.sd_u > 0.0) {
          row.kappa = s.kappa;
          row.c0sq = c0sq;
          row.soc.emplace_back(lay.r, c.sd_u);
        } else {
          row.constant += s.kappa * std::sqrt(c0sq);
        }
      }
      prog.rows.push_back(std::move(row));
      continue;
    }
    for (std::size_t j = 0; j < J; ++j) {
      const auto& c = d.components[j];
      PhiGroup g;
      g.a2 = d.a * d.a * c.sd_theta * c.sd_theta;
      if (segment) {
        g.rho_idx = lay.rho;
        g.b2 = c.sd_u * c.sd_u * s.norm_scale * s.norm_scale;
      }
      const int gid = static_cast<int>(prog.groups.size());
      prog.groups.push_back(g);
      for (std::size_t nl = 0; nl < s.lnq.num_lines(); ++nl) {
        ProgramRow row;
        row.tag = "cone_" + std::to_string(i) + "_" + std::to_string(j) + "_" + std::to_string(nl);
        row.linear.emplace_back(lay.p, -beta_p);
        row.constant = d.a * c.mu_theta - beta0;
        add_r(row, c.mu_u);
        row.group = gid;
        row.y_idx = lay.y(i, j);
        row.lambda = s.lnq.slopes[nl];
        row.gamma = s.lnq.intercepts[nl];
        prog.rows.push_back(std::move(row));
      }
    }
    ProgramRow prob;
    prob.tag = "probability_" + std::to_string(i);
    prob.constant = 1.0 - s.epsilon;
    for (std::size_t j = 0; j < J; ++j) prob.linear.emplace_back(lay.y(i, j), -d.components[j].weight);
    prog.rows.push_back(std::move(prob));
    for (std::size_t j = 0; j < J; ++j) {
      ProgramRow ylo, yhi;
      ylo.tag = "y_min";
      ylo.linear.emplace_back(lay.y(i, j), -1.0);
      ylo.constant = s.y_min;
      yhi.tag = "y_max";
      yhi.linear.emplace_back(lay.y(i, j), 1.0);
      yhi.constant = -s.y_max;
      prog.rows.push_back(ylo);
      prog.rows.push_back(yhi);
    }
  }

  // Starting point: centre of the box constraints; comfort rows are left to phase I.
  double r0 = 0.0;
  if (segment) {
    const double rho0 = 0.5 * (s.rho_lo + s.rho_hi);
    prog.x0[lay.rho] = rho0;
    r0 = s.capacity_at(rho0);
  }
  if (bench_r) {
    r0 = 0.5 * s.r_cap;
    prog.x0[lay.r] = r0;
  }
  prog.x0[lay.p] = 0.5 * (b.power_min + b.power_max);
  if (!benchmark) {
    const double margin = 1e-3 * (s.y_max - s.y_min);
    const double y0 = std::clamp(1.0 - 0.5 * s.epsilon, s.y_min + margin, s.y_max - margin);
    for (std::size_t i = 0; i < s.rows.size(); ++i)
      for (std::size_t j = 0; j < J; ++j) prog.x0[lay.y(i, j)] = y0;
  }
  if (layout_out) *layout_out = lay;
  return prog;
}

struct SolveResult {
  SolveStatus status = SolveStatus::numerical_failure;
  Method method = Method::proposed;
  int hour = -1;
  double p_ha = 0.0;
  double r_ha = 0.0;
  double rho = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<double>> y;
  double objective = std::numeric_limits<double>::infinity();
  int segment = -1;  ///< -1: R = 0 problem or benchmark
  KktResiduals kkt;
  SpecResiduals residuals;
  int newton_iterations = 0;
  int phase1_iterations = 0;
  int subproblems = 0;  ///< subproblems actually solved
  int pruned = 0;
  bool relaxed = false;
  double wall_ms = 0.0;
  std::string message;

  bool ok() const { return status == SolveStatus::optimal; }
};

inline SolveResult solve_subproblem(const SubproblemSpec& s, const SolverConfig& cfg = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  SolveResult r;
  r.method = s.method;
  r.segment = s.kind == SubproblemKind::segment ? s.segment : -1;
  r.subproblems = 1;
  auto finish = [&] {
    r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return r;
  };
  if (s.flagged_infeasible) {
    r.status = SolveStatus::infeasible;
    r.message = s.note;
    return finish();
  }
  ProgramLayout lay;
  const auto prog = build_program(s, &lay);
  const auto br = solve_barrier(prog, cfg);
  r.newton_iterations = br.newton_iterations;
  r.phase1_iterations = br.phase1_iterations;
  r.relaxed = br.relaxed;
  r.message = br.message;
  r.status = br.status;
  if (br.status != SolveStatus::optimal) return finish();
  const auto& x = br.x;
  r.p_ha = x[lay.p];
  if (lay.rho >= 0) {
    r.rho = x[lay.rho];
    r.r_ha = s.capacity_at(r.rho);
  } else if (lay.r >= 0) {
    r.r_ha = x[lay.r];
  }
  if (lay.y0 >= 0) {
    r.y.assign(s.rows.size(), std::vector<double>(lay.components));
    for (std::size_t i = 0; i < s.rows.size(); ++i)
      for (std::size_t j = 0; j < lay.components; ++j) r.y[i][j] = x[lay.y(i, j)];
  }
  r.objective = spec_objective(s, r.p_ha, r.r_ha);
  r.kkt = br.kkt;
  SubproblemPoint pt{r.p_ha, std::isnan(r.rho) ? 0.0 : r.rho, r.r_ha, r.y};
  r.residuals = spec_residuals(s, pt);
  return finish();
}

/// Valid lower bound on the optimal value of a proposed subproblem, from a
/// convex relaxation in (p, R): every y_j is replaced by the smallest value
/// compatible with Σπy ≥ 1−ε and y ≤ y_max, and the norm is evaluated at R.
/// Returns +∞ when the relaxation is infeasible and nullopt when it could not be solved.
inline std::optional<double> relaxation_bound(const SubproblemSpec& s, const SolverConfig& cfg = {}) {
  if (s.kind == SubproblemKind::benchmark) return std::nullopt;
  if (s.flagged_infeasible) return std::numeric_limits<double>::infinity();
  SubproblemSpec rel = s;
  rel.kind = SubproblemKind::benchmark;
  rel.kappa = 1.0;
  rel.rows.clear();
  const bool segment = s.kind == SubproblemKind::segment;
  const double r_lo = segment ? std::exp(s.rho_lo) : 0.0;
  const double r_hi = segment ? std::exp(s.rho_hi) : 0.0;
  rel.r_cap = segment ? r_hi : 0.0;
  for (const auto& d : s.rows) {
    double wsum = 0.0;
    for (const auto& c : d.components) wsum += c.weight;
    for (const auto& c : d.components) {
      const double need = (1.0 - s.epsilon - (wsum - c.weight) * s.y_max) / c.weight;
      const double ylb = std::clamp(need, s.y_min, s.y_max);
      DeterministicConstraint e = d;
      ComponentData cd = c;
      // κ = 1 in the benchmark form; fold the quantile factor into the stds.
      const double q = std::exp(s.lnq(ylb));
      cd.sd_theta *= q;
      cd.sd_u *= q;
      cd.weight = 1.0;
      e.components = {cd};
      rel.rows.push_back(std::move(e));
    }
  }
  ProgramLayout lay;
  auto prog = build_program(rel, &lay);
  if (segment) {
    ProgramRow lo;
    lo.tag = "r_segment_lo";
    lo.linear.emplace_back(lay.r, -1.0);
    lo.constant = r_lo;
    prog.rows.push_back(lo);
    ProgramRow hi;
    hi.tag = "r_segment_hi";
    hi.linear.emplace_back(lay.r, 1.0);
    hi.constant = -r_hi;
    prog.rows.push_back(hi);
    prog.x0[lay.r] = 0.5 * (r_lo + r_hi);
  }
  const auto br = solve_barrier(prog, cfg);
  if (br.status == SolveStatus::infeasible) return std::numeric_limits<double>::infinity();
  if (br.status != SolveStatus::optimal || br.relaxed) return std::nullopt;
  const double obj = br.objective;
  const double slack = std::max(br.kkt.gap, 0.0) + 1e-9 * (1.0 + std::abs(obj));
  return obj - slack;
}

struct HourSolveOptions {
  bool prune = true;        ///< skip subproblems whose relaxation bound exceeds the incumbent
  std::size_t threads = 1;  ///< used only without pruning
};

/// Solves the subproblems and keeps the cheapest optimal one (ties: earliest).
/// With pruning, subproblems are visited in order of their relaxation bound
/// and skipped once the bound exceeds the incumbent.
inline SolveResult solve_hour(const std::vector<SubproblemSpec>& specs, const SolverConfig& cfg = {},
                              const HourSolveOptions& opt = {}) {
  if (specs.empty()) throw ParameterError("solve_hour: no subproblems");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<SolveResult> results(specs.size());
  std::vector<bool> solved(specs.size(), false);
  int pruned = 0;
  if (opt.prune) {
    std::vector<double> bound(specs.size(), -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < specs.size(); ++i)
      if (auto b = relaxation_bound(specs[i], cfg)) bound[i] = *b;
    std::vector<std::size_t> order(specs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return bound[a] < bound[b]; });
    double incumbent = std::numeric_limits<double>::infinity();
    for (auto i : order) {
      if (bound[i] > incumbent || bound[i] == std::numeric_limits<double>::infinity()) {
        ++pruned;
        results[i].status = SolveStatus::infeasible;
        results[i].message = "pruned";
        continue;
      }
      results[i] = solve_subproblem(specs[i], cfg);
      solved[i] = true;
      if (results[i].ok()) incumbent = std::min(incumbent, results[i].objective);
    }
  } else {
    parallel_for(specs.size(), opt.threads, [&](std::size_t i) { results[i] = solve_subproblem(specs[i], cfg); });
    std::fill(solved.begin(), solved.end(), true);
  }
  SolveResult best;
  best.method = specs.front().method;
  bool any_failure = false;
  int newton = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    if (!solved[i]) continue;
    newton += r.newton_iterations + r.phase1_iterations;
    if (r.status == SolveStatus::numerical_failure) any_failure = true;
    if (r.ok() && (!best.ok() || r.objective < best.objective)) best = r;
  }
  if (!best.ok()) {
    best.status = any_failure ? SolveStatus::numerical_failure : SolveStatus::infeasible;
    best.message = any_failure ? "no subproblem solved" : "all subproblems infeasible";
    best.p_ha = best.r_ha = 0.0;
    best.objective = std::numeric_limits<double>::quiet_NaN();
  }
  best.subproblems = static_cast<int>(specs.size()) - pruned;
  best.pruned = pruned;
  best.newton_iterations = newton;
  best.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return best;
}

struct HourProblem {
  int hour = 0;
  std::vector<SubproblemSpec> specs;
};

/// Hours are independent; fans out across hours, each hour solved sequentially.
inline std::vector<SolveResult> solve_day(const std::vector<HourProblem>& hours, const SolverConfig& cfg = {},
                                          std::size_t threads = 1) {
  std::vector<SolveResult> out(hours.size());
  parallel_for(hours.size(), threads, [&](std::size_t i) {
    out[i] = solve_hour(hours[i].specs, cfg);
    out[i].hour = hours[i].hour;
  });
  return out;
}

inline double total_cost(const std::vector<SolveResult>& day) {
  double c = 0.0;
  for (const auto& r : day) c += r.ok() ? r.objective : 0.0;
  return c;
}

// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const SolveResult& r) {
  nlohmann::ordered_json j;
  j["hour"] = r.hour;
  j["method"] = to_string(r.method);
  j["status"] = to_string(r.status);
  j["p_ha"] = r.p_ha;
  j["R_ha"] = r.r_ha;
  j["rho"] = std::isnan(r.rho) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r.rho);
  j["objective"] = std::isfinite(r.objective) ? nlohmann::ordered_json(r.objective) : nlohmann::ordered_json(nullptr);
  j["segment"] = r.segment;
  j["y"] = r.y;
  j["kkt"] = {{"stationarity", r.kkt.stationarity}, {"primal", r.kkt.primal}, {"gap", r.kkt.gap}};
  j["residuals"] = {{"cone", r.residuals.max_cone},
                    {"probability", r.residuals.max_probability},
                    {"bounds", r.residuals.max_bounds},
                    {"deterministic", r.residuals.max_deterministic},
                    {"chance_margin", r.residuals.min_chance_margin}};
  j["newton_iterations"] = r.newton_iterations;
  j["phase1_iterations"] = r.phase1_iterations;
  j["subproblems"] = r.subproblems;
  j["pruned"] = r.pruned;
  j["relaxed"] = r.relaxed;
  j["wall_ms"] = r.wall_ms;
  j["message"] = r.message;
  return j;
}

inline constexpr const char* kOfferCsvHeader = "hour,p_ha,R_ha,objective,status,segment,wall_ms";

inline void write_offer_row(std::ostream& out, const SolveResult& r) {
  out << r.hour << ',' << r.p_ha << ',' << r.r_ha << ',' << r.objective << ',' << to_string(r.status) << ','
      << r.segment << ',' << r.wall_ms << '\n';
}

}  // namespace hvacreg
