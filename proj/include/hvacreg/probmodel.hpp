#pragma once

// Standard-normal kernels and one-dimensional Gaussian mixtures fitted by EM.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hvacreg/errors.hpp"

namespace hvacreg {

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Φ⁻¹(p). Acklam's rational approximation (relative error ~1e−9) followed by
/// one Halley refinement against the erfc-based Φ.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal_quantile: p must be in (0,1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley step; the upper tail is refined on the complement for accuracy.
  const double e = p > 0.5 ? (1.0 - p) - 0.5 * std::erfc(x / std::numbers::sqrt2) : normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

// ---------------------------------------------------------------------------

struct GaussianComponent {
  double weight = 1.0;
  double mean = 0.0;
  double std = 1.0;
};

struct FitDiagnostics {
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
  bool degenerate = false;  ///< variance floor was active (collapsed or constant data)
  std::size_t samples = 0;
};

struct MixtureModel {
  std::vector<GaussianComponent> components;
  FitDiagnostics diagnostics;

  std::size_t size() const { return components.size(); }

  double mean() const {
    double m = 0.0;
    for (const auto& c : components) m += c.weight * c.mean;
    return m;
  }

  void validate() const {
    if (components.empty()) throw ParameterError("mixture: needs at least one component");
    double w = 0.0;
    for (const auto& c : components) {
      if (!(c.weight > 0.0 && c.weight <= 1.0)) throw ParameterError("mixture: weight outside (0,1]");
      if (!(c.std >= 0.0)) throw ParameterError("mixture: negative std");
      w += c.weight;
    }
    if (std::abs(w - 1.0) > 1e-10) throw ParameterError("mixture: weights do not sum to 1");
  }

  /// Descending weight, ties by ascending mean.
  void canonicalize() {
    std::stable_sort(components.begin(), components.end(), [](const auto& a, const auto& b) {
      if (a.weight != b.weight) return a.weight > b.weight;
      return a.mean < b.mean;
    });
  }
};

inline double mixture_cdf(const MixtureModel& m, double x) {
  double p = 0.0;
  for (const auto& c : m.components) {
    if (c.std > 0.0)
      p += c.weight * normal_cdf((x - c.mean) / c.std);
    else
      p += c.weight * (x >= c.mean ? 1.0 : 0.0);
  }
  return std::clamp(p, 0.0, 1.0);
}

inline double log_normal_pdf(double x, double mean, double std) {
  const double z = (x - mean) / std;
  return -0.5 * z * z - std::log(std) - 0.5 * std::log(2.0 * std::numbers::pi);
}

inline double mixture_log_pdf(const MixtureModel& m, double x) {
  double mx = -std::numeric_limits<double>::infinity();
  std::vector<double> terms(m.size());
  for (std::size_t j = 0; j < m.size(); ++j) {
    terms[j] = std::log(m.components[j].weight) + log_normal_pdf(x, m.components[j].mean, m.components[j].std);
    mx = std::max(mx, terms[j]);
  }
  double s = 0.0;
  for (double t : terms) s += std::exp(t - mx);
  return mx + std::log(s);
}

inline double mixture_log_likelihood(const MixtureModel& m, std::span<const double> xs) {
  double ll = 0.0;
  for (double x : xs) ll += mixture_log_pdf(m, x);
  return ll;
}

/// Draws a component by weight, then a normal variate from it.
inline std::vector<double> mixture_sample(const MixtureModel& m, std::uint64_t seed, std::size_t n) {
  m.validate();
  std::mt19937_64 rng(seed);
  std::vector<double> w;
  for (const auto& c : m.components) w.push_back(c.weight);
  std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(n);
  for (auto& x : out) {
    const auto& c = m.components[pick(rng)];
    x = c.mean + c.std * normal(rng);
  }
  return out;
}

struct EmOptions {
  std::size_t num_components = 3;
  std::uint64_t seed = 7;
  double tol = 1e-8;  ///< relative log-likelihood improvement
  int max_iter = 500;
};

/// Expectation-maximization for a 1-D Gaussian mixture, seeded k-means++ style.
/// Component standard deviations are floored at 1e−6 × sample std (1e−9 for
/// constant samples). Throws std::logic_error if the log-likelihood ever drops.
inline MixtureModel fit_em(std::span<const double> xs, const EmOptions& opt = {}) {
  const std::size_t n = xs.size();
  const std::size_t k = opt.num_components;
  if (k < 1) throw ParameterError("fit_em: need at least one component");
  if (n < 10 * k) throw ParameterError("fit_em: need at least 10 samples per component");
  if (!(opt.tol > 0.0) || opt.max_iter < 1) throw ParameterError("fit_em: bad tol/max_iter");

  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= static_cast<double>(n);
  const double sd = std::sqrt(var);
  const double floor = sd > 0.0 ? 1e-6 * sd : 1e-9;

  // k-means++ seeding.
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> centers;
  centers.push_back(xs[static_cast<std::size_t>(unif(rng) * static_cast<double>(n)) % n]);
  std::vector<double> d2(n);
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centers) best = std::min(best, (xs[i] - c) * (xs[i] - c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      centers.push_back(centers.front());
      continue;
    }
    double r = unif(rng) * total;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      r -= d2[i];
      if (r <= 0.0) {
        pick = i;
        break;
      }
    }
    centers.push_back(xs[pick]);
  }

  MixtureModel model;
  model.components.resize(k);
  {
    std::vector<double> cnt(k, 0.0), s(k, 0.0), ss(k, 0.0);
    for (double x : xs) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j)
        if (std::abs(x - centers[j]) < std::abs(x - centers[best])) best = j;
      cnt[best] += 1.0;
      s[best] += x;
      ss[best] += x * x;
    }
    for (std::size_t j = 0; j < k; ++j) {
      auto& c = model.components[j];
      if (cnt[j] > 0.0) {
        c.mean = s[j] / cnt[j];
        c.std = std::sqrt(std::max(ss[j] / cnt[j] - c.mean * c.mean, 0.0));
      } else {
        c.mean = centers[j];
        c.std = sd;
      }
      c.std = std::max(c.std > 0.0 ? c.std : sd, floor);
      c.weight = std::max(cnt[j], 1.0) / (static_cast<double>(n) + static_cast<double>(k));
    }
    double wsum = 0.0;
    for (const auto& c : model.components) wsum += c.weight;
    for (auto& c : model.components) c.weight /= wsum;
  }

  std::vector<double> resp(n * k);
  auto e_step = [&]() {
    double ll = 0.0;
    std::vector<double> lw(k);
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) {
        const auto& c = model.components[j];
        lw[j] = std::log(c.weight) + log_normal_pdf(xs[i], c.mean, c.std);
        mx = std::max(mx, lw[j]);
      }
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += std::exp(lw[j] - mx);
      const double lse = mx + std::log(s);
      ll += lse;
      for (std::size_t j = 0; j < k; ++j) resp[i * k + j] = std::exp(lw[j] - lse);
    }
    return ll;
  };

  bool floored = false;
  auto m_step = [&]() {
    for (std::size_t j = 0; j < k; ++j) {
      double nk = 0.0, s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        nk += resp[i * k + j];
        s += resp[i * k + j] * xs[i];
      }
      auto& c = model.components[j];
      if (nk <= std::numeric_limits<double>::min()) {
        // Empty component: keep its location, give it a negligible weight.
        c.weight = std::numeric_limits<double>::min();
        continue;
      }
      c.mean = s / nk;
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i) v += resp[i * k + j] * (xs[i] - c.mean) * (xs[i] - c.mean);
      c.std = std::sqrt(v / nk);
      if (!(c.std > floor)) {
        c.std = floor;
        floored = true;
      }
      c.weight = nk / static_cast<double>(n);
    }
  };

  double ll = e_step();
  int it = 0;
  bool converged = false;
  while (it < opt.max_iter) {
    m_step();
    const double next = e_step();
    ++it;
    if (next < ll - 1e-9 * std::max(1.0, std::abs(ll)))
      throw std::logic_error("fit_em: log-likelihood decreased");
    const double gain = next - ll;
    ll = next;
    if (gain < opt.tol * std::max(1.0, std::abs(ll))) {
      converged = true;
      break;
    }
  }

  double wsum = 0.0;
  for (const auto& c : model.components) wsum += c.weight;
  for (auto& c : model.components) c.weight /= wsum;
  model.canonicalize();
  model.diagnostics = FitDiagnostics{ll, it, converged, floored || sd == 0.0, n};
  return model;
}

// ---------------------------------------------------------------------------
// Moments and a normality check.

struct SampleMoments {
  double mean = 0.0;
  double std = 0.0;  ///< population
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
  std::size_t n = 0;
};

inline SampleMoments sample_moments(std::span<const double> xs) {
  SampleMoments m;
  m.n = xs.size();
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double x : xs) {
    const double d = x - m.mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  const double nn = static_cast<double>(xs.size());
  m2 /= nn;
  m3 /= nn;
  m4 /= nn;
  m.std = std::sqrt(m2);
  if (m2 > 0.0) {
    m.skewness = m3 / std::pow(m2, 1.5);
    m.excess_kurtosis = m4 / (m2 * m2) - 3.0;
  }
  return m;
}

/// Jarque–Bera statistic; asymptotically χ² with 2 degrees of freedom.
inline double jarque_bera(const SampleMoments& m) {
  return static_cast<double>(m.n) / 6.0 * (m.skewness * m.skewness + 0.25 * m.excess_kurtosis * m.excess_kurtosis);
}

/// 95% critical value of χ²₂.
inline constexpr double kJarqueBera95 = 5.991464547107979;

// ---------------------------------------------------------------------------
// JSON (schema "hvacreg.mixture", version 1).

inline constexpr int kMixtureSchemaVersion = 1;

inline nlohmann::ordered_json to_json(const MixtureModel& m) {
  nlohmann::ordered_json j;
  j["schema"] = "hvacreg.mixture";
  j["version"] = kMixtureSchemaVersion;
  j["components"] = nlohmann::ordered_json::array();
  for (const auto& c : m.components)
    j["components"].push_back({{"weight", c.weight}, {"mean", c.mean}, {"std", c.std}});
  j["diagnostics"] = {{"log_likelihood", m.diagnostics.log_likelihood},
                      {"iterations", m.diagnostics.iterations},
                      {"converged", m.diagnostics.converged},
                      {"degenerate", m.diagnostics.degenerate},
                      {"samples", m.diagnostics.samples}};
  return j;
}

inline MixtureModel mixture_from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != "hvacreg.mixture") throw ConfigurationError("mixture json: wrong schema");
  if (j.value("version", 0) != kMixtureSchemaVersion) throw ConfigurationError("mixture json: unsupported version");
  MixtureModel m;
  for (const auto& c : j.at("components"))
    m.components.push_back({c.at("weight").get<double>(), c.at("mean").get<double>(), c.at("std").get<double>()});
  if (j.contains("diagnostics")) {
    const auto& d = j["diagnostics"];
    m.diagnostics.log_likelihood = d.value("log_likelihood", 0.0);
    m.diagnostics.iterations = d.value("iterations", 0);
    m.diagnostics.converged = d.value("converged", false);
    m.diagnostics.degenerate = d.value("degenerate", false);
    m.diagnostics.samples = d.value("samples", std::size_t{0});
  }
  m.validate();
  return m;
}

}  // namespace hvacreg
