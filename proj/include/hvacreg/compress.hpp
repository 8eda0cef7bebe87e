#pragma once

// Temporal compression: the hour is split into |T| equal windows; in each
// window the indoor temperature is bounded by the free response at the window
// boundaries plus R times the windowed extreme of the signal response [A s]_l.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hvacreg/errors.hpp"
#include "hvacreg/signals.hpp"
#include "hvacreg/thermal.hpp"

namespace hvacreg {

/// Window τ covers steps l ∈ [τW+1, (τ+1)W] (W = |L|/|T|), i.e. the
/// temperatures reached after consuming signal slots τW .. (τ+1)W−1.
struct WindowPlan {
  std::size_t num_windows = 10;
  std::size_t slots = 1800;

  WindowPlan() = default;
  WindowPlan(std::size_t windows, std::size_t horizon) : num_windows(windows), slots(horizon) { validate(); }

  void validate() const {
    if (num_windows < 1) throw ParameterError("window plan: need at least one window");
    if (slots < 1) throw ParameterError("window plan: slots must be >= 1");
    if (slots % num_windows != 0) throw ParameterError("window plan: slots must be divisible by the window count");
  }
  std::size_t width() const { return slots / num_windows; }
  std::size_t start(std::size_t tau) const { return tau * width(); }
  std::size_t end(std::size_t tau) const { return (tau + 1) * width(); }
};

struct HourFeatures {
  HourId id;
  std::vector<double> u_bar;    ///< per window
  std::vector<double> u_under;  ///< per window
  double mileage = 0.0;
  double mean_signal = 0.0;
};

struct UncertaintyFeatures {
  WindowPlan plan;
  std::vector<HourFeatures> hours;

  /// Samples of one feature across hours (optionally filtered by hour-of-day set).
  std::vector<double> column(std::size_t tau, bool upper) const {
    std::vector<double> out;
    out.reserve(hours.size());
    for (const auto& h : hours) out.push_back(upper ? h.u_bar[tau] : h.u_under[tau]);
    return out;
  }
};

inline HourFeatures extract_trace_features(const SignalTrace& trace, const ThermalCoeffs& c, const WindowPlan& plan) {
  if (trace.values.size() != plan.slots) throw ParameterError("extract_features: trace length does not match plan");
  HourFeatures f;
  f.id = trace.id;
  f.u_bar.assign(plan.num_windows, -std::numeric_limits<double>::infinity());
  f.u_under.assign(plan.num_windows, std::numeric_limits<double>::infinity());
  const std::size_t w = plan.width();
  double u = 0.0;
  for (std::size_t l = 1; l <= plan.slots; ++l) {
    u = c.a_in * u - c.a_q * trace.values[l - 1];
    const std::size_t tau = (l - 1) / w;
    f.u_bar[tau] = std::max(f.u_bar[tau], u);
    f.u_under[tau] = std::min(f.u_under[tau], u);
  }
  f.mileage = mileage(trace);
  f.mean_signal = mean_signal(trace);
  return f;
}

inline UncertaintyFeatures extract_features(const SignalSet& signals, const ThermalCoeffs& c, const WindowPlan& plan) {
  plan.validate();
  UncertaintyFeatures out;
  out.plan = plan;
  out.hours.reserve(signals.size());
  for (const auto& tr : signals.traces) out.hours.push_back(extract_trace_features(tr, c, plan));
  return out;
}

enum class Boundary { window_start, window_end };
enum class Side { upper, lower };

/// One compressed chance constraint  P(αᵀω ≤ β) ≥ 1−ε  with
/// α = [a_in_b, R], ω = ±[θ_0, u], β = beta0 + beta_p·p_ha.
struct CompressedConstraint {
  std::size_t tau = 0;
  Boundary boundary = Boundary::window_start;
  Side side = Side::upper;
  std::size_t step = 0;  ///< boundary step index l
  double a_in_b = 1.0;   ///< a_in^l
  double a_out_b = 0.0;  ///< a_out (1 − a_in^l)/(1 − a_in)
  double a_h_b = 0.0;
  double a_q_b = 0.0;
  double beta0 = 0.0;
  double beta_p = 0.0;

  /// +1 for upper constraints (ω = [θ_0, ū_τ]), −1 for lower (ω = [−θ_0, −u̲_τ]).
  double omega_sign() const { return side == Side::upper ? 1.0 : -1.0; }
  bool uses_upper_feature() const { return side == Side::upper; }
  double beta(double p_ha) const { return beta0 + beta_p * p_ha; }
  /// Free response at the boundary step (θ_0 given).
  double free_response(double theta0, double theta_out, double heat, double p_ha) const {
    return a_in_b * theta0 + a_out_b * theta_out + a_h_b * heat + a_q_b * p_ha;
  }
};

/// Emits the 4·|T| compressed constraints: for each window, upper/lower bound
/// at the window start and end boundaries.
inline std::vector<CompressedConstraint> build_constraints(const ThermalCoeffs& c, const HourContext& ctx,
                                                           const WindowPlan& plan, double theta_min,
                                                           double theta_max) {
  plan.validate();
  if (ctx.slots != plan.slots) throw ParameterError("build_constraints: context slots differ from plan");
  std::vector<CompressedConstraint> out;
  out.reserve(4 * plan.num_windows);
  for (std::size_t tau = 0; tau < plan.num_windows; ++tau) {
    for (Side side : {Side::upper, Side::lower}) {
      for (Boundary b : {Boundary::window_start, Boundary::window_end}) {
        CompressedConstraint cc;
        cc.tau = tau;
        cc.boundary = b;
        cc.side = side;
        cc.step = b == Boundary::window_start ? plan.start(tau) : plan.end(tau);
        const double l = static_cast<double>(cc.step);
        const double g = geometric_sum(c, l);
        cc.a_in_b = std::pow(c.a_in, l);
        cc.a_out_b = c.a_out * g;
        cc.a_h_b = c.a_h * g;
        cc.a_q_b = c.a_q * g;
        const double drive = cc.a_out_b * ctx.theta_out + cc.a_h_b * ctx.heat_load;
        if (side == Side::upper) {
          cc.beta0 = theta_max - drive;
          cc.beta_p = -cc.a_q_b;
        } else {
          cc.beta0 = drive - theta_min;
          cc.beta_p = cc.a_q_b;
        }
        out.push_back(cc);
      }
    }
  }
  return out;
}

/// Windowed temperature extremes estimated from one trace's features.
struct CompressionEstimate {
  double upper = 0.0;
  double lower = 0.0;
};

inline CompressionEstimate compressed_estimate(const ThermalCoeffs& c, const HourContext& ctx, const WindowPlan& plan,
                                               const HourFeatures& f, double p_ha, double r_ha) {
  CompressionEstimate e{-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  for (std::size_t tau = 0; tau < plan.num_windows; ++tau) {
    const double f0 = free_response(c, ctx, p_ha, plan.start(tau));
    const double f1 = free_response(c, ctx, p_ha, plan.end(tau));
    e.upper = std::max(e.upper, std::max(f0, f1) + r_ha * f.u_bar[tau]);
    e.lower = std::min(e.lower, std::min(f0, f1) + r_ha * f.u_under[tau]);
  }
  return e;
}

struct BoundCheckReport {
  bool safe = true;        ///< estimate brackets the simulated extremes
  bool refinement = true;  ///< |T|-window estimate no looser than the single-window estimate
  double true_max = 0.0;
  double true_min = 0.0;
  double est_max = 0.0;
  double est_min = 0.0;
  double single_max = 0.0;
  double single_min = 0.0;
};

/// Simulates the trace and checks the safe-approximation direction of the
/// windowed estimate and its ordering against the single-window (|T| = 1) estimate.
inline BoundCheckReport compression_bound_check(const ThermalCoeffs& c, const HourContext& ctx, const WindowPlan& plan,
                                                const SignalTrace& trace, double p_ha, double r_ha,
                                                double tol = 1e-9) {
  BoundCheckReport r;
  const auto theta = simulate_trajectory(c, ctx, p_ha, r_ha, trace.values);
  r.true_max = *std::max_element(theta.begin() + 1, theta.end());
  r.true_min = *std::min_element(theta.begin() + 1, theta.end());
  const auto est = compressed_estimate(c, ctx, plan, extract_trace_features(trace, c, plan), p_ha, r_ha);
  const WindowPlan single(1, plan.slots);
  const auto one = compressed_estimate(c, ctx, single, extract_trace_features(trace, c, single), p_ha, r_ha);
  r.est_max = est.upper;
  r.est_min = est.lower;
  r.single_max = one.upper;
  r.single_min = one.lower;
  r.safe = est.upper >= r.true_max - tol && est.lower <= r.true_min + tol;
  r.refinement = est.upper <= one.upper + tol && est.lower >= one.lower - tol;
  return r;
}

// ---------------------------------------------------------------------------
// Feature cache: `hour_id,tau,u_bar,u_under` and sidecar `hour_id,mileage,mean_signal`.

inline void write_feature_cache(const UncertaintyFeatures& f, std::ostream& windows, std::ostream& sidecar) {
  windows << "hour_id,tau,u_bar,u_under\n";
  sidecar << "hour_id,mileage,mean_signal\n";
  windows.precision(17);
  sidecar.precision(17);
  for (const auto& h : f.hours) {
    for (std::size_t tau = 0; tau < h.u_bar.size(); ++tau)
      windows << h.id.str() << ',' << tau << ',' << h.u_bar[tau] << ',' << h.u_under[tau] << '\n';
    sidecar << h.id.str() << ',' << h.mileage << ',' << h.mean_signal << '\n';
  }
}

inline UncertaintyFeatures read_feature_cache(std::istream& windows, std::istream& sidecar, const WindowPlan& plan) {
  auto split = [](const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  std::string line;
  std::size_t ln = 1;
  if (!std::getline(windows, line) || detail::trim(line) != "hour_id,tau,u_bar,u_under")
    throw ParseError("feature cache: bad header", 1);
  std::map<std::string, HourFeatures> by_id;
  std::vector<std::string> order;
  while (std::getline(windows, line)) {
    ++ln;
    if (detail::trim(line).empty()) continue;
    const auto cells = split(detail::trim(line));
    if (cells.size() != 4) throw ParseError("feature cache: expected 4 fields", ln);
    auto tau = static_cast<std::size_t>(std::stoul(cells[1]));
    if (tau >= plan.num_windows) throw ParseError("feature cache: tau out of range", ln);
    auto [it, inserted] = by_id.try_emplace(cells[0]);
    if (inserted) {
      it->second.id = parse_hour_id(cells[0]);
      it->second.u_bar.assign(plan.num_windows, std::numeric_limits<double>::quiet_NaN());
      it->second.u_under.assign(plan.num_windows, std::numeric_limits<double>::quiet_NaN());
      order.push_back(cells[0]);
    }
    it->second.u_bar[tau] = std::stod(cells[2]);
    it->second.u_under[tau] = std::stod(cells[3]);
  }
  ln = 1;
  if (!std::getline(sidecar, line) || detail::trim(line) != "hour_id,mileage,mean_signal")
    throw ParseError("feature sidecar: bad header", 1);
  while (std::getline(sidecar, line)) {
    ++ln;
    if (detail::trim(line).empty()) continue;
    const auto cells = split(detail::trim(line));
    if (cells.size() != 3) throw ParseError("feature sidecar: expected 3 fields", ln);
    auto it = by_id.find(cells[0]);
    if (it == by_id.end()) throw ParseError("feature sidecar: unknown hour id", ln);
    it->second.mileage = std::stod(cells[1]);
    it->second.mean_signal = std::stod(cells[2]);
  }
  UncertaintyFeatures f;
  f.plan = plan;
  for (const auto& id : order) {
    auto& h = by_id[id];
    for (std::size_t tau = 0; tau < plan.num_windows; ++tau)
      if (std::isnan(h.u_bar[tau])) throw DataError("feature cache: missing window for " + id);
    f.hours.push_back(std::move(h));
  }
  return f;
}

}  // namespace hvacreg
