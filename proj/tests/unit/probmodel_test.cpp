#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "hvacreg/probmodel.hpp"

namespace hvacreg {
namespace {

TEST(NormalQuantile, MatchesHighPrecisionReferences) {
  // Quantiles of the exact binary value of each double input, at 40 digits.
  const std::pair<double, double> ref[] = {{0.975, 1.959963984540053855604},  {0.99, 2.326347874040840767637},
                                           {0.999, 3.090232306167813277758},  {1e-10, -6.3613409024040561991},
                                           {0.5, 0.0},                        {0.02, -2.053748910631823044339},
                                           {0.9999999, 5.199337582290661093657}};
  for (auto [p, q] : ref) EXPECT_NEAR(normal_quantile(p), q, 1e-13 * std::max(1.0, std::abs(q))) << p;
}

TEST(NormalQuantile, InvertsTheCdf) {
  for (double p = 1e-12; p < 1.0; p = p < 0.01 ? p * 10 : p + 0.01) {
    const double x = normal_quantile(p);
    const double back = p > 0.5 ? 1.0 - 0.5 * std::erfc(x / std::sqrt(2.0)) : normal_cdf(x);
    EXPECT_NEAR(back, p, 1e-14 * std::max(p, 1e-3)) << p;
  }
  EXPECT_DOUBLE_EQ(normal_quantile(normal_cdf(1.0)), 1.0);
}

TEST(NormalQuantile, RejectsOutsideOpenInterval) {
  EXPECT_THROW(normal_quantile(0.0), DomainError);
  EXPECT_THROW(normal_quantile(1.0), DomainError);
  EXPECT_THROW(normal_quantile(-0.1), DomainError);
}

TEST(FitEm, RecoversWellSeparatedMixture) {
  MixtureModel truth;
  truth.components = {{0.6, -2.0, 0.5}, {0.4, 3.0, 1.0}};
  const auto xs = mixture_sample(truth, 17, 20000);
  EmOptions opt;
  opt.num_components = 2;
  const auto m = fit_em(xs, opt);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_TRUE(m.diagnostics.converged);
  EXPECT_NEAR(m.components[0].weight, 0.6, 0.02);
  EXPECT_NEAR(m.components[0].mean, -2.0, 0.05);
  EXPECT_NEAR(m.components[0].std, 0.5, 0.05);
  EXPECT_NEAR(m.components[1].mean, 3.0, 0.05);
  EXPECT_NEAR(m.components[1].std, 1.0, 0.05);
}

TEST(FitEm, SingleComponentIsMaximumLikelihoodGaussian) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(1.5, 2.0);
  std::vector<double> xs(5000);
  for (auto& x : xs) x = n(rng);
  EmOptions opt;
  opt.num_components = 1;
  const auto m = fit_em(xs, opt);
  const auto mo = sample_moments(xs);
  EXPECT_NEAR(m.components[0].mean, mo.mean, 1e-12);
  EXPECT_NEAR(m.components[0].std, mo.std, 1e-10);
  EXPECT_DOUBLE_EQ(m.components[0].weight, 1.0);
}

TEST(FitEm, IsDeterministicAndCanonical) {
  MixtureModel truth;
  truth.components = {{0.3, 0.0, 1.0}, {0.3, 5.0, 1.0}, {0.4, 10.0, 1.0}};
  const auto xs = mixture_sample(truth, 5, 3000);
  const auto a = fit_em(xs), b = fit_em(xs);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t j = 0; j < a.size(); ++j) {
    EXPECT_EQ(a.components[j].weight, b.components[j].weight);
    EXPECT_EQ(a.components[j].mean, b.components[j].mean);
    if (j) { EXPECT_GE(a.components[j - 1].weight, a.components[j].weight); }
  }
}

TEST(FitEm, HandlesConstantDataWithVarianceFloor) {
  const std::vector<double> xs(100, 0.25);
  EmOptions opt;
  opt.num_components = 2;
  const auto m = fit_em(xs, opt);
  EXPECT_TRUE(m.diagnostics.degenerate);
  for (const auto& c : m.components) {
    EXPECT_NEAR(c.mean, 0.25, 1e-12);
    EXPECT_GT(c.std, 0.0);
  }
  EXPECT_TRUE(std::isfinite(m.diagnostics.log_likelihood));
}

TEST(FitEm, RejectsTooFewSamples) {
  const std::vector<double> xs(25, 1.0);
  EmOptions opt;
  opt.num_components = 3;
  EXPECT_THROW(fit_em(xs, opt), ParameterError);
  opt.num_components = 0;
  EXPECT_THROW(fit_em(xs, opt), ParameterError);
}

TEST(Mixture, CdfMatchesSampleFrequency) {
  MixtureModel m;
  m.components = {{0.7, 0.0, 1.0}, {0.3, 4.0, 0.5}};
  const auto xs = mixture_sample(m, 1, 200000);
  for (double x : {-1.0, 0.5, 3.5, 4.5}) {
    double freq = 0.0;
    for (double v : xs) freq += v <= x ? 1.0 : 0.0;
    freq /= static_cast<double>(xs.size());
    const double p = mixture_cdf(m, x);
    EXPECT_NEAR(freq, p, 4.0 * std::sqrt(p * (1 - p) / xs.size()));
  }
}

TEST(Mixture, ValidateRejectsBadWeights) {
  MixtureModel m;
  m.components = {{0.5, 0.0, 1.0}, {0.4, 1.0, 1.0}};
  EXPECT_THROW(m.validate(), ParameterError);
  m.components = {};
  EXPECT_THROW(m.validate(), ParameterError);
}

TEST(Mixture, JsonRoundTrip) {
  MixtureModel truth;
  truth.components = {{0.6, -2.0, 0.5}, {0.4, 3.0, 1.0}};
  EmOptions opt;
  opt.num_components = 2;
  const auto m = fit_em(mixture_sample(truth, 2, 2000), opt);
  const auto back = mixture_from_json(nlohmann::json::parse(to_json(m).dump()));
  ASSERT_EQ(back.size(), m.size());
  for (std::size_t j = 0; j < m.size(); ++j) {
    EXPECT_EQ(back.components[j].weight, m.components[j].weight);
    EXPECT_EQ(back.components[j].mean, m.components[j].mean);
    EXPECT_EQ(back.components[j].std, m.components[j].std);
  }
  EXPECT_EQ(back.diagnostics.iterations, m.diagnostics.iterations);
  auto bad = to_json(m);
  bad["schema"] = "other";
  EXPECT_THROW(mixture_from_json(nlohmann::json::parse(bad.dump())), ConfigurationError);
}

TEST(Moments, JarqueBeraSeparatesNormalFromBimodal) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> xs(4000);
  for (auto& x : xs) x = n(rng);
  EXPECT_LT(jarque_bera(sample_moments(xs)), 3.0 * kJarqueBera95);
  MixtureModel m;
  m.components = {{0.8, 0.0, 1.0}, {0.2, 6.0, 1.0}};
  EXPECT_GT(jarque_bera(sample_moments(mixture_sample(m, 4, 4000))), 10.0 * kJarqueBera95);
}

}  // namespace
}  // namespace hvacreg
