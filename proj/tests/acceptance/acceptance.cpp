// Acceptance suite: one PASS/FAIL line per criterion AC1..AC10.
// Usage: acceptance [AC<k> ...]   (no arguments runs everything)

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hvacreg/compress.hpp"
#include "hvacreg/config.hpp"
#include "hvacreg/pipeline.hpp"
#include "hvacreg/probmodel.hpp"
#include "hvacreg/pwl.hpp"
#include "hvacreg/reformulate.hpp"
#include "hvacreg/signals.hpp"
#include "hvacreg/solve.hpp"
#include "hvacreg/thermal.hpp"
#include "hvacreg/validate.hpp"
#include "test_support.hpp"

using namespace hvacreg;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

/// Optimality tolerance required of every solve; orderings are compared at this resolution.
constexpr double kKktTol = 1e-6;
const std::vector<double> kEpsGrid = {0.01, 0.05, 0.10, 0.15};

/// Upper Wilson band at the nominal level: wilson_hi(ε, n) − ε.
double wilson_slack(double eps, std::size_t n) {
  const double z = 1.959963984540054, nn = static_cast<double>(n), z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double centre = (eps + z2 / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(eps * (1.0 - eps) / nn + z2 / (4.0 * nn * nn)) / denom;
  return centre + half - eps;
}

// ---------------------------------------------------------------------------

Outcome ac1_thermal() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const BuildingParams b;
  const auto c = discretize(b, 2.0);
  const std::size_t L = 1800;
  const auto A = response_weights(c, L);
  Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(L, L);
  for (std::size_t l = 1; l <= L; ++l)
    for (std::size_t k = 0; k < l; ++k) dense(static_cast<Eigen::Index>(l - 1), static_cast<Eigen::Index>(k)) = A(l, k);
  double max_err = 0.0;
  for (int h = 0; h < 100; ++h) {
    HourContext ctx;
    ctx.theta_out = 25.0 + 12.0 * U(rng);
    ctx.heat_load = 3.0 + 5.0 * U(rng);
    ctx.theta0 = 23.0 + 4.0 * U(rng);
    ctx.slots = L;
    const double p = 0.5 + 1.0 * U(rng);
    const double R = std::min({p, 2.0 - p, 1.0}) * U(rng);
    const auto kind = h % 2 ? SynthKind::bimodal_burst : SynthKind::mean_reverting;
    const auto sig = synthesize(kind, 1000 + static_cast<std::uint64_t>(h), 1).traces.front().values;
    const auto rec = simulate_trajectory(c, ctx, p, R, sig);
    const Eigen::Map<const Eigen::VectorXd> s(sig.data(), static_cast<Eigen::Index>(L));
    const Eigen::VectorXd As = dense * s;
    for (std::size_t l = 1; l <= L; ++l) {
      const double closed = free_response(c, ctx, p, l) + R * As[static_cast<Eigen::Index>(l - 1)];
      max_err = std::max(max_err, std::abs(closed - rec[l]));
    }
  }
  // RK4 on C dθ/dt = g(θ_out − θ) + h − COP·p over one 2-second step (time in hours).
  double max_rel = 0.0;
  for (int k = 0; k < 200; ++k) {
    BuildingParams bb;
    bb.heat_capacity = 0.5 + 3.0 * U(rng);
    bb.heat_transfer = 0.05 + 0.5 * U(rng);
    bb.cop = 2.0 + 4.0 * U(rng);
    const double dt_s = 1.0 + 9.0 * U(rng);
    const auto cc = discretize(bb, dt_s);
    const double th0 = 20.0 + 10.0 * U(rng), tout = 25.0 + 12.0 * U(rng), heat = 5.0 * U(rng), p = 2.0 * U(rng);
    auto f = [&](double th) { return (bb.heat_transfer * (tout - th) + heat - bb.cop * p) / bb.heat_capacity; };
    const int steps = 200;
    const double hstep = dt_s / 3600.0 / steps;
    double th = th0;
    for (int i = 0; i < steps; ++i) {
      const double k1 = f(th), k2 = f(th + 0.5 * hstep * k1), k3 = f(th + 0.5 * hstep * k2), k4 = f(th + hstep * k3);
      th += hstep / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    const double disc = cc.a_in * th0 + cc.a_out * tout + cc.a_h * heat + cc.a_q * p;
    max_rel = std::max(max_rel, std::abs(disc - th) / std::abs(th));
  }
  const double secs = seconds_since(t0);
  const bool pass = max_err <= 1e-9 && max_rel <= 1e-8 && secs < 5.0;
  return {pass, "closed-form vs recursion max |err| " + fmt(max_err) + " C; discretize vs RK4 max rel " +
                    fmt(max_rel) + "; " + fmt(secs, 3) + " s"};
}

Outcome ac2_compression() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const BuildingParams b;
  const auto c = discretize(b, 2.0);
  const WindowPlan plan(10, 1800);
  int unsafe = 0, unordered = 0;
  const auto pool_a = synthesize(SynthKind::bimodal_burst, 7, 500);
  const auto pool_b = synthesize(SynthKind::mean_reverting, 8, 500);
  for (int k = 0; k < 1000; ++k) {
    const auto& tr = (k % 2 ? pool_a : pool_b).traces[static_cast<std::size_t>(k / 2)];
    HourContext ctx;
    ctx.theta_out = 25.0 + 12.0 * U(rng);
    ctx.heat_load = 3.0 + 5.0 * U(rng);
    ctx.theta0 = 22.0 + 6.0 * U(rng);
    ctx.slots = 1800;
    const double p = 2.0 * U(rng);
    const double R = std::min({p, 2.0 - p, 1.0}) * U(rng);
    const auto r = compression_bound_check(c, ctx, plan, tr, p, R);
    unsafe += r.safe ? 0 : 1;
    unordered += r.refinement ? 0 : 1;
  }
  const double secs = seconds_since(t0);
  return {unsafe == 0 && unordered == 0 && secs < 30.0,
          std::to_string(unsafe) + " safety and " + std::to_string(unordered) +
              " ordering counterexamples over 1000 pairs; " + fmt(secs, 3) + " s"};
}

Outcome ac3_pwl() {
  const auto t0 = Clock::now();
  const double y_max = 1.0 - 1e-6;
  const double lo = 0.5 + 1e-6;
  bool above = true;
  double min_gap = 1e300;
  const auto f10 = build_lnq_pwl(10, y_max);
  for (int i = 0; i <= 10000; ++i) {
    const double y = lo + (y_max - lo) * i / 10000.0;
    if (y <= 0.5) continue;
    const double d = f10(y) - ln_normal_quantile(y);
    min_gap = std::min(min_gap, d);
    if (d < -1e-12) above = false;
  }
  const double tangent = f10(kPhiOne);
  std::vector<double> gaps;
  for (std::size_t n : {5, 10, 20}) gaps.push_back(lnq_pwl_gap(build_lnq_pwl(n, y_max), kPhiOne, y_max).max_abs);
  const bool shrinking = gaps[1] < gaps[0] && gaps[2] < gaps[1];
  const double secs = seconds_since(t0);
  return {above && std::abs(tangent) <= 1e-12 && shrinking && secs < 2.0,
          "min(PWL - ln Phi^-1) " + fmt(min_gap) + "; PWL(Phi(1)) " + fmt(tangent) +
              "; max gap on [Phi(1), y_max] for N=5/10/20: " + fmt(gaps[0]) + "/" + fmt(gaps[1]) + "/" +
              fmt(gaps[2]) + "; " + fmt(secs, 3) + " s"};
}

Outcome ac4_component_probability() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, 1.0);
  const std::size_t draws = 1000000;
  double worst = 0.0;
  int failures = 0;
  for (int k = 0; k < 50; ++k) {
    const std::size_t J = 1 + static_cast<std::size_t>(k % 4);
    MixtureModel mix;
    double wsum = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      const double w = 0.2 + U(rng);
      mix.components.push_back({w, 0.5 * N(rng), 0.05 + 0.55 * U(rng)});
      wsum += w;
    }
    for (auto& cmp : mix.components) cmp.weight /= wsum;
    HourModel hm;
    hm.theta0 = {25.0 + 3.0 * U(rng), 0.05 + 0.25 * U(rng)};
    WindowModels wm;
    wm.upper = wm.lower = mix;
    hm.windows = {wm};
    CompressedConstraint cc;
    cc.side = U(rng) < 0.5 ? Side::upper : Side::lower;
    cc.a_in_b = 0.3 + 0.7 * U(rng);
    const double R = U(rng);
    const double sg = cc.omega_sign();
    double mean = 0.0, second = 0.0;
    for (const auto& cmp : mix.components) {
      mean += cmp.weight * cmp.mean;
      second += cmp.weight * (cmp.std * cmp.std + cmp.mean * cmp.mean);
    }
    const double var_u = second - mean * mean;
    const double mu = sg * (cc.a_in_b * hm.theta0.mean + R * mean);
    const double sd = std::sqrt(std::pow(cc.a_in_b * hm.theta0.std, 2) + R * R * var_u);
    cc.beta0 = mu + (-1.5 + 3.5 * U(rng)) * sd;
    cc.beta_p = 0.0;
    const auto det = reformulate_gaussian_component(cc, 0, hm);
    const double p_model = constraint_probability(det, 0.0, R);
    const auto us = mixture_sample(mix, 9000 + static_cast<std::uint64_t>(k), draws);
    std::mt19937_64 trng(7000 + static_cast<std::uint64_t>(k));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < draws; ++i) {
      const double th = hm.theta0.mean + hm.theta0.std * N(trng);
      if (sg * (cc.a_in_b * th + R * us[i]) <= cc.beta0) ++hits;
    }
    const double p_mc = static_cast<double>(hits) / static_cast<double>(draws);
    const double se = std::sqrt(std::max(p_model * (1.0 - p_model), 1e-12) / static_cast<double>(draws));
    const double z = std::abs(p_mc - p_model) / se;
    worst = std::max(worst, z);
    failures += z > 3.0 ? 1 : 0;
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < 60.0, std::to_string(failures) + "/50 instances beyond 3 SE; worst |z| " +
                                            fmt(worst, 3) + "; " + fmt(secs, 3) + " s"};
}

Outcome ac5_solver_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  double worst_rel = 0.0, worst_kkt = 0.0;
  bool ok = true;
  std::string notes;
  for (int k = 0; k < 5; ++k) {
    auto f = testing::make_hour(100 + static_cast<std::uint64_t>(k), 500, 3, 10, 29.0 + 6.0 * U(rng),
                                4.5 + 2.0 * U(rng));
    f.prices.energy = 20.0 + 40.0 * U(rng);
    f.prices.mileage = 0.08 + 0.08 * U(rng);
    FormulationOptions opt;
    opt.epsilon = 0.01 + 0.14 * U(rng);
    const auto specs = assemble_subproblems(f.constraints, f.model, f.prices, opt, f.building);
    const auto r = solve_hour(specs);
    const auto g = testing::grid_oracle(specs, 400);
    if (!r.ok() || !g.found) {
      ok = false;
      notes += " instance " + std::to_string(k) + " unsolved;";
      continue;
    }
    const double rel = std::abs(r.objective - g.objective) / std::max(std::abs(g.objective), 1.0);
    const double kkt = std::max({r.kkt.stationarity, r.kkt.primal, r.kkt.gap});
    worst_rel = std::max(worst_rel, rel);
    worst_kkt = std::max(worst_kkt, kkt);
    if (rel > 0.005 || kkt > kKktTol || r.objective > g.objective + kKktTol) ok = false;
  }
  const double secs = seconds_since(t0);
  return {ok && secs < 300.0, "worst relative objective gap to grid " + fmt(worst_rel) + "; worst KKT residual " +
                                  fmt(worst_kkt) + ";" + notes + " " + fmt(secs, 3) + " s"};
}

// Shared state for AC6/AC7: 7000 synthetic hours, 70/30 split (2100 holdout).
struct EpsilonStudy {
  RunConfig cfg;
  SignalSplit split;
  FittedModels fm;
  std::map<std::pair<Method, double>, std::vector<ViolationReport>> reports;
  std::map<std::pair<Method, double>, std::vector<SolveResult>> offers;
  double seconds = 0.0;
};

EpsilonStudy& epsilon_study() {
  static EpsilonStudy st = [] {
    const auto t0 = Clock::now();
    EpsilonStudy s;
    s.cfg.signals.hours = 7000;
    s.split = split_signals(load_signals(s.cfg), s.cfg.holdout_fraction, s.cfg.split_seed);
    s.fm = fit_models(s.cfg, s.split);
    for (double eps : kEpsGrid) {
      for (Method m : {Method::proposed, Method::b1_gaussian}) {
        RunConfig c = s.cfg;
        c.formulation.epsilon = eps;
        auto offers = optimize_day(c, s.fm, m);
        s.reports[{m, eps}] = validate_day(c, offers, s.split.holdout);
        s.offers[{m, eps}] = std::move(offers);
      }
    }
    s.seconds = seconds_since(t0);
    return s;
  }();
  return st;
}

double day_max_violation(const std::vector<ViolationReport>& reps) {
  double v = 0.0;
  for (const auto& r : reps) v = std::max(v, r.max_violation);
  return v;
}

Outcome ac6_feasibility_gate() {
  auto& st = epsilon_study();
  const std::size_t n = st.split.holdout.size();
  bool ok = n >= 2000;
  std::string detail = std::to_string(n) + " holdout traces;";
  for (double eps : kEpsGrid) {
    const auto& offers = st.offers[{Method::proposed, eps}];
    bool all_ok = true;
    for (const auto& o : offers) all_ok = all_ok && o.ok();
    const double v = day_max_violation(st.reports[{Method::proposed, eps}]);
    const double bound = eps + wilson_slack(eps, n);
    ok = ok && all_ok && v <= bound;
    detail += " eps " + fmt(eps, 2) + ": " + fmt(v) + " <= " + fmt(bound) + (all_ok ? "" : " (unsolved hours)") + ";";
  }
  ok = ok && st.seconds < 600.0;
  return {ok, detail + " " + fmt(st.seconds, 3) + " s"};
}

Outcome ac7_non_gaussian() {
  auto& st = epsilon_study();
  bool exists = false;
  std::string detail;
  for (double eps : kEpsGrid) {
    const double vb = day_max_violation(st.reports[{Method::b1_gaussian, eps}]);
    const double vp = day_max_violation(st.reports[{Method::proposed, eps}]);
    if (vb > eps && vp <= eps) exists = true;
    detail += " eps " + fmt(eps, 2) + ": B1 " + fmt(vb) + ", proposed " + fmt(vp) + ";";
  }
  return {exists, "bimodal_burst;" + detail};
}

Outcome ac8_orderings() {
  RunConfig cfg;
  const auto split = split_signals(load_signals(cfg), cfg.holdout_fraction, cfg.split_seed);
  const auto fm = fit_models(cfg, split);
  RunConfig c15 = cfg;
  c15.formulation.epsilon = 0.15;
  const auto prop = optimize_day(c15, fm, Method::proposed);
  const auto b2 = optimize_day(c15, fm, Method::b2_moment);
  auto above = [](double a, double b) { return a > b + kKktTol * std::max(1.0, std::abs(b)); };
  int cost_viol = 0, r_viol = 0, unsolved = 0;
  for (std::size_t h = 0; h < prop.size(); ++h) {
    if (!prop[h].ok() || !b2[h].ok()) {
      ++unsolved;
      continue;
    }
    if (above(prop[h].objective, b2[h].objective)) ++cost_viol;
    if (above(b2[h].r_ha, prop[h].r_ha)) ++r_viol;
  }
  RunConfig j1 = cfg;
  j1.em.num_components = 1;
  const auto fm1 = fit_models(j1, split);
  int j1_viol = 0;
  for (double eps : kEpsGrid) {
    RunConfig c = j1;
    c.formulation.epsilon = eps;
    const auto p1 = optimize_day(c, fm1, Method::proposed);
    const auto b1 = optimize_day(c, fm1, Method::b1_gaussian);
    for (std::size_t h = 0; h < p1.size(); ++h) {
      if (!p1[h].ok() || !b1[h].ok()) {
        ++unsolved;
        continue;
      }
      if (above(p1[h].r_ha, b1[h].r_ha)) ++j1_viol;
    }
  }
  return {cost_viol == 0 && r_viol == 0 && j1_viol == 0 && unsolved == 0,
          "eps 0.15 hour-wise: cost(proposed) > cost(B2) in " + std::to_string(cost_viol) +
              " hours, R(proposed) < R(B2) in " + std::to_string(r_viol) + " hours (day cost " +
              fmt(total_cost(prop), 6) + " vs " + fmt(total_cost(b2), 6) + "); J=1: R(proposed) > R(B1) in " +
              std::to_string(j1_viol) + " hour-epsilon pairs; unsolved " + std::to_string(unsolved)};
}

Outcome ac9_sensitivity() {
  RunConfig cfg;
  const auto rows = run_sweep(cfg, SweepAxis::num_windows, {1, 2, 5, 10}, {Method::proposed}, false);
  bool cost_ok = true;
  std::string detail = "|T| 1/2/5/10 day cost";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    detail += " " + fmt(rows[i].total_cost, 6);
    if (rows[i].infeasible_hours) cost_ok = false;
    if (i && rows[i].total_cost > rows[i - 1].total_cost + 1e-3 * std::abs(rows[i - 1].total_cost)) cost_ok = false;
  }
  detail += "; solve ms";
  for (const auto& r : rows) detail += " " + fmt(r.solve_ms, 5);
  const auto [lo, hi] = default_rho_range(cfg.building, MarketPrices{});
  std::vector<double> gaps;
  for (std::size_t n : {10, 50, 100, 500}) gaps.push_back(exp_pwl_gap(build_exp_pwl(n, lo, hi)).max_abs);
  bool gap_ok = true;
  for (std::size_t i = 1; i < gaps.size(); ++i) gap_ok = gap_ok && gaps[i] < gaps[i - 1];
  detail += "; exp-PWL max gap |N^R| 10/50/100/500:";
  for (double g : gaps) detail += " " + fmt(g);
  return {cost_ok && gap_ok, detail};
}

Outcome ac10_performance() {
  const auto t0 = Clock::now();
  RunConfig cfg;
  const auto split = split_signals(load_signals(cfg), cfg.holdout_fraction, cfg.split_seed);
  const auto fm = fit_models(cfg, split);
  const auto offers = optimize_day(cfg, fm, Method::proposed);
  const auto reps = validate_day(cfg, offers, split.holdout);
  const double secs = seconds_since(t0);
  double worst_hour = 0.0;
  bool all_ok = true;
  for (const auto& o : offers) {
    worst_hour = std::max(worst_hour, o.wall_ms / 1000.0);
    all_ok = all_ok && o.ok();
  }
  return {split.fit.size() == 500 && all_ok && reps.size() == 24 && secs < 600.0 && worst_hour < 60.0,
          std::to_string(split.fit.size()) + " fit hours, 24 offers, " + std::to_string(split.holdout.size()) +
              " holdout traces; pipeline " + fmt(secs, 3) + " s; slowest hour " + fmt(worst_hour, 3) + " s; " +
              std::to_string(thread_cap()) + " threads"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> suite = {
      {"AC1", ac1_thermal},        {"AC2", ac2_compression},       {"AC3", ac3_pwl},
      {"AC4", ac4_component_probability},         {"AC5", ac5_solver_oracle},     {"AC6", ac6_feasibility_gate},
      {"AC7", ac7_non_gaussian},   {"AC8", ac8_orderings},         {"AC9", ac9_sensitivity},
      {"AC10", ac10_performance}};
  std::set<std::string> only(argv + 1, argv + argc);
  int failed = 0;
  for (const auto& [name, fn] : suite) {
    if (!only.empty() && !only.count(name)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << name << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
    failed += o.pass ? 0 : 1;
  }
  return failed ? 1 : 0;
}
