#pragma once

// Max-of-lines approximations used by the convexification:
//   * ln Φ⁻¹(y) on (0.5, y_max]: tangent at Φ(1) plus chords on [Φ(1), y_max]
//   * e^ρ on [ρ_lo, ρ_hi]: chords between uniformly spaced breakpoints
// Both over-approximate their target on the covered interval.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "hvacreg/errors.hpp"
#include "hvacreg/probmodel.hpp"

namespace hvacreg {

struct PwlFunction {
  std::vector<double> breakpoints;  ///< abscissas of the chord endpoints
  std::vector<double> slopes;
  std::vector<double> intercepts;

  std::size_t num_lines() const { return slopes.size(); }
  double line(std::size_t n, double x) const { return slopes[n] * x + intercepts[n]; }

  double operator()(double x) const {
    double v = -std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < slopes.size(); ++n) v = std::max(v, line(n, x));
    return v;
  }
};

inline double ln_normal_quantile(double y) { return std::log(normal_quantile(y)); }

inline const double kPhiOne = normal_cdf(1.0);

/// Line 0 is the tangent of ln Φ⁻¹ at y = Φ(1); lines 1..N are chords through
/// N+1 uniformly spaced points from Φ(1) to y_max.
inline PwlFunction build_lnq_pwl(std::size_t num_pieces, double y_max) {
  if (num_pieces < 1) throw ParameterError("build_lnq_pwl: need at least one piece");
  if (!(y_max > kPhiOne && y_max < 1.0)) throw ParameterError("build_lnq_pwl: y_max must be in (Phi(1), 1)");
  PwlFunction f;
  // d/dy ln Φ⁻¹(y) = 1/(v φ(v)), v = Φ⁻¹(y) = 1 at the tangent point.
  const double slope0 = 1.0 / normal_pdf(1.0);
  f.slopes.push_back(slope0);
  f.intercepts.push_back(-slope0 * kPhiOne);
  for (std::size_t k = 0; k <= num_pieces; ++k)
    f.breakpoints.push_back(kPhiOne + (y_max - kPhiOne) * static_cast<double>(k) / static_cast<double>(num_pieces));
  f.breakpoints.back() = y_max;
  for (std::size_t k = 0; k < num_pieces; ++k) {
    const double y0 = f.breakpoints[k], y1 = f.breakpoints[k + 1];
    const double v0 = k == 0 ? 0.0 : ln_normal_quantile(y0);
    const double v1 = ln_normal_quantile(y1);
    const double s = (v1 - v0) / (y1 - y0);
    f.slopes.push_back(s);
    f.intercepts.push_back(v0 - s * y0);
  }
  return f;
}

/// Chords of e^ρ between num_pieces+1 uniformly spaced points on [lo, hi].
/// Line n is the chord over [breakpoints[n], breakpoints[n+1]].
inline PwlFunction build_exp_pwl(std::size_t num_pieces, double lo, double hi) {
  if (num_pieces < 1) throw ParameterError("build_exp_pwl: need at least one piece");
  if (!(std::isfinite(lo) && std::isfinite(hi) && lo < hi)) throw ParameterError("build_exp_pwl: invalid range");
  PwlFunction f;
  for (std::size_t k = 0; k <= num_pieces; ++k)
    f.breakpoints.push_back(lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(num_pieces));
  f.breakpoints.back() = hi;
  for (std::size_t k = 0; k < num_pieces; ++k) {
    const double a = f.breakpoints[k], b = f.breakpoints[k + 1];
    const double ea = std::exp(a), eb = std::exp(b);
    const double s = (eb - ea) / (b - a);
    f.slopes.push_back(s);
    f.intercepts.push_back(ea - s * a);
  }
  return f;
}

/// max over [a, b] of chord(ρ)/e^ρ for the chord of e^ρ over [a, b].
inline double exp_chord_max_ratio(double a, double b) {
  const double ea = std::exp(a);
  const double s = (std::exp(b) - ea) / (b - a);
  // d/dρ (chord/e^ρ) = 0  ⇔  chord(ρ) = s.
  const double rho = std::clamp(a + (s - ea) / s, a, b);
  return std::max(1.0, (ea + s * (rho - a)) / std::exp(rho));
}

struct GapStats {
  double max_abs = 0.0;
  double mean_abs = 0.0;
  double max_rel = 0.0;
  double min_signed = std::numeric_limits<double>::infinity();  ///< min of (pwl − target)
};

/// Gap statistics of an exp PWL over a dense uniform grid of its range.
inline GapStats exp_pwl_gap(const PwlFunction& f, std::size_t grid = 100001) {
  GapStats g;
  const double lo = f.breakpoints.front(), hi = f.breakpoints.back();
  for (std::size_t i = 0; i < grid; ++i) {
    const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(grid - 1);
    const double d = f(x) - std::exp(x);
    g.max_abs = std::max(g.max_abs, std::abs(d));
    g.mean_abs += std::abs(d);
    g.max_rel = std::max(g.max_rel, std::abs(d) / std::exp(x));
    g.min_signed = std::min(g.min_signed, d);
  }
  g.mean_abs /= static_cast<double>(grid);
  return g;
}

/// Gap statistics of a ln Φ⁻¹ PWL over a uniform grid of [lo, hi].
inline GapStats lnq_pwl_gap(const PwlFunction& f, double lo, double hi, std::size_t grid = 10001) {
  GapStats g;
  for (std::size_t i = 0; i < grid; ++i) {
    const double y = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(grid - 1);
    const double d = f(y) - ln_normal_quantile(y);
    g.max_abs = std::max(g.max_abs, std::abs(d));
    g.mean_abs += std::abs(d);
    g.min_signed = std::min(g.min_signed, d);
  }
  g.mean_abs /= static_cast<double>(grid);
  return g;
}

}  // namespace hvacreg
