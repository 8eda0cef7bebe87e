#pragma once

// Lumped single-zone building model
//
//   C dθ/dt = g (θ_out − θ) + h − COP·p
//
// integrated exactly over a step of constant inputs:
//
//   θ_l = a_in θ_{l−1} + a_out θ_out + a_h h + a_q (p_ha − R_ha s_{l−1})
//
// Units: MW, MWh, °C, seconds.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "hvacreg/errors.hpp"

namespace hvacreg {

struct BuildingParams {
  double heat_capacity = 1.75;  ///< C [MWh/°C]
  double heat_transfer = 0.2;   ///< g [MW/°C]
  double cop = 5.0;
  double comfort_min = 22.0;  ///< θ_min [°C]
  double comfort_max = 28.0;  ///< θ_max [°C]
  double power_min = 0.0;     ///< p_min [MW]
  double power_max = 2.0;     ///< p_max [MW]

  void validate() const {
    if (!(heat_capacity > 0.0)) throw ParameterError("building: heat_capacity must be > 0");
    if (!(heat_transfer > 0.0)) throw ParameterError("building: heat_transfer must be > 0");
    if (!(cop > 0.0)) throw ParameterError("building: cop must be > 0");
    if (!(comfort_min <= comfort_max)) throw ParameterError("building: comfort_min must be <= comfort_max");
    if (!(power_min < power_max)) throw ParameterError("building: power_min must be < power_max");
    if (!(power_min >= 0.0)) throw ParameterError("building: power_min must be >= 0");
  }
};

struct ThermalCoeffs {
  double a_in = 0.0;
  double a_out = 0.0;   ///< 1 − a_in, computed without cancellation
  double a_h = 0.0;     ///< °C per MW of heat load
  double a_q = 0.0;     ///< °C per MW of electric power (negative)
  double step_seconds = 0.0;
  double cop = 0.0;
};

struct HourContext {
  double theta_out = 30.0;  ///< outdoor temperature [°C]
  double heat_load = 0.5;   ///< h [MW]
  double theta0 = 25.0;     ///< indoor temperature at the start of the hour [°C]
  std::size_t slots = 1800;
  double theta0_guard_lo = 0.0;
  double theta0_guard_hi = 50.0;

  void validate() const {
    if (slots < 1) throw ParameterError("hour context: slots must be >= 1");
    if (!(theta0 >= theta0_guard_lo && theta0 <= theta0_guard_hi))
      throw ParameterError("hour context: theta0 outside plausible range");
  }
};

inline ThermalCoeffs discretize(const BuildingParams& params, double step_seconds) {
  params.validate();
  if (!(step_seconds > 0.0)) throw ParameterError("discretize: step must be > 0");
  const double x = params.heat_transfer * (step_seconds / 3600.0) / params.heat_capacity;
  ThermalCoeffs c;
  c.a_in = std::exp(-x);
  c.a_out = -std::expm1(-x);
  c.a_h = c.a_out / params.heat_transfer;
  c.a_q = -params.cop * c.a_h;
  c.step_seconds = step_seconds;
  c.cop = params.cop;
  return c;
}

/// Σ_{k<l} a_in^k = (1 − a_in^l)/(1 − a_in), evaluated with expm1 for accuracy.
inline double geometric_sum(const ThermalCoeffs& c, double l) {
  if (l == 0.0) return 0.0;
  const double log_a = std::log(c.a_in);
  if (log_a == 0.0) return l;
  return std::expm1(l * log_a) / std::expm1(log_a);
}

/// Free response f(l): the temperature after l steps with a zero regulation signal.
inline double free_response(const ThermalCoeffs& c, const HourContext& ctx, double p_ha, std::size_t l) {
  const double ld = static_cast<double>(l);
  const double g = geometric_sum(c, ld);
  return std::pow(c.a_in, ld) * ctx.theta0 + c.a_out * g * ctx.theta_out + c.a_h * g * ctx.heat_load +
         c.a_q * g * p_ha;
}

/// Indexed view of the lower-triangular response matrix A, with
/// A(l, k) = (−a_q) a_in^{l−1−k} for 0 ≤ k < l. Rows are 1-based (l = 1..|L|),
/// columns index signal slots 0..|L|−1.
class ResponseWeights {
 public:
  ResponseWeights(const ThermalCoeffs& c, std::size_t horizon) : c_(c), horizon_(horizon) {
    if (horizon < 1) throw ParameterError("response_weights: horizon must be >= 1");
  }

  double operator()(std::size_t l, std::size_t k) const {
    if (k >= l) return 0.0;
    return -c_.a_q * std::pow(c_.a_in, static_cast<double>(l - 1 - k));
  }

  std::size_t horizon() const { return horizon_; }

  /// [A s]_l for l = 0..|L| (entry 0 is always zero), by running recursion.
  std::vector<double> apply(std::span<const double> s) const {
    if (s.size() != horizon_) throw ParameterError("response_weights: signal length mismatch");
    std::vector<double> out(horizon_ + 1, 0.0);
    for (std::size_t l = 1; l <= horizon_; ++l) out[l] = c_.a_in * out[l - 1] - c_.a_q * s[l - 1];
    return out;
  }

 private:
  ThermalCoeffs c_;
  std::size_t horizon_;
};

inline ResponseWeights response_weights(const ThermalCoeffs& c, std::size_t horizon) {
  return ResponseWeights(c, horizon);
}

inline void check_signal_range(std::span<const double> signal) {
  for (std::size_t i = 0; i < signal.size(); ++i) {
    if (!(signal[i] >= -1.0 && signal[i] <= 1.0))
      throw DataError("signal value out of [-1,1] at slot " + std::to_string(i));
  }
}

/// Temperature trajectory θ_0..θ_|L| (|L|+1 entries; index l is the temperature
/// after l steps, index 0 is the start-of-hour temperature).
inline std::vector<double> simulate_trajectory(const ThermalCoeffs& c, const HourContext& ctx, double p_ha,
                                               double r_ha, std::span<const double> signal) {
  if (r_ha < 0.0) throw ParameterError("simulate_trajectory: R_ha must be >= 0");
  if (signal.size() != ctx.slots) throw ParameterError("simulate_trajectory: signal length != slots");
  check_signal_range(signal);
  std::vector<double> theta(ctx.slots + 1);
  theta[0] = ctx.theta0;
  const double drive = c.a_out * ctx.theta_out + c.a_h * ctx.heat_load;
  for (std::size_t l = 1; l <= ctx.slots; ++l)
    theta[l] = c.a_in * theta[l - 1] + drive + c.a_q * (p_ha - r_ha * signal[l - 1]);
  return theta;
}

}  // namespace hvacreg
