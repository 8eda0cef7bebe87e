#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include <gtest/gtest.h>

#include "hvacreg/pipeline.hpp"
#include "test_support.hpp"

namespace hvacreg {
namespace {

namespace fs = std::filesystem;

RunConfig small_config() {
  RunConfig c;
  c.signals.cadence_seconds = 60.0;
  c.signals.hours = 240;
  c.em.num_components = 2;
  c.formulation.exp_pieces = 8;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const FittedModels& small_fit() {
  static const auto fm = [] {
    const auto c = small_config();
    return fit_models(c, split_signals(load_signals(c), c.holdout_fraction, c.split_seed), 2);
  }();
  return fm;
}

TEST(Split, DeterministicDisjointAndSized) {
  const auto c = small_config();
  const auto all = load_signals(c);
  const auto a = split_signals(all, 0.3, 11), b = split_signals(all, 0.3, 11), d = split_signals(all, 0.3, 12);
  EXPECT_EQ(a.holdout.size(), 72u);
  EXPECT_EQ(a.fit.size(), 168u);
  for (std::size_t i = 0; i < a.holdout.size(); ++i) EXPECT_EQ(a.holdout.traces[i].id, b.holdout.traces[i].id);
  bool differs = false;
  for (std::size_t i = 0; i < a.holdout.size(); ++i) differs |= a.holdout.traces[i].id != d.holdout.traces[i].id;
  EXPECT_TRUE(differs);
  EXPECT_NO_THROW(check_holdout_disjoint(a.fit, a.holdout));
}

TEST(Split, IndependentOfInputOrder) {
  const auto c = small_config();
  auto all = load_signals(c);
  const auto a = split_signals(all, 0.3, 11);
  std::reverse(all.traces.begin(), all.traces.end());
  const auto b = split_signals(all, 0.3, 11);
  for (std::size_t i = 0; i < a.holdout.size(); ++i) EXPECT_EQ(a.holdout.traces[i].id, b.holdout.traces[i].id);
}

TEST(Pooling, CircularHourDistance) {
  EXPECT_EQ(pool_hours(0, 1), (std::set<int>{23, 0, 1}));
  EXPECT_EQ(pool_hours(12, 0), (std::set<int>{12}));
  EXPECT_EQ(pool_hours(5, 12).size(), 24u);
}

TEST(Fit, WritesOneMixtureFilePerFeatureAndIsByteIdentical) {
  const auto c = small_config();
  const auto split = split_signals(load_signals(c), c.holdout_fraction, c.split_seed);
  const auto d1 = testing::scratch_dir("fit_a"), d2 = testing::scratch_dir("fit_b");
  write_fit(fit_models(c, split, 1), d1);
  write_fit(fit_models(c, split, 4), d2);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(d1 / "mixtures")) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(d2 / "mixtures" / e.path().filename())) << e.path();
  }
  EXPECT_EQ(files, 24u * 10u * 2u);
  for (const char* f : {"features_windows.csv", "features_sidecar.csv", "fit_summary.json"})
    EXPECT_EQ(slurp(d1 / f), slurp(d2 / f)) << f;
  const auto j = nlohmann::json::parse(slurp(d1 / "mixtures" / "h07_t3_lower.json"));
  EXPECT_EQ(j["feature"], "h07_t3_lower");
  EXPECT_EQ(j["config_hash"], config_hash(c));
}

TEST(Fit, LoadRoundTripsAndChecksHash) {
  const auto c = small_config();
  const auto dir = testing::scratch_dir("fit_load");
  write_fit(small_fit(), dir);
  const auto back = load_fit(dir, c);
  EXPECT_EQ(back.config_hash, small_fit().config_hash);
  EXPECT_EQ(back.holdout_ids, small_fit().holdout_ids);
  for (int h : {0, 13, 23})
    for (std::size_t tau = 0; tau < 10; ++tau) {
      EXPECT_EQ(back.windows[h][tau].upper.components[0].mean, small_fit().windows[h][tau].upper.components[0].mean);
      EXPECT_EQ(back.windows[h][tau].lower_moments.std, small_fit().windows[h][tau].lower_moments.std);
    }
  auto other = c;
  other.signals.seed = 7;
  EXPECT_THROW(load_fit(dir, other), ConfigurationError);
  EXPECT_THROW(load_fit(testing::scratch_dir("fit_none"), c), ConfigurationError);
  fs::remove(dir / "mixtures" / "h00_t0_upper.json");
  EXPECT_THROW(load_fit(dir, c), ConfigurationError);
}

TEST(Fit, TooFewSamplesNamesTheFeature) {
  auto c = small_config();
  c.signals.hours = 30;
  c.pool_radius = 0;
  try {
    fit_models(c, split_signals(load_signals(c), c.holdout_fraction, c.split_seed), 1);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("_t0_upper"), std::string::npos) << e.what();
  }
}

TEST(Optimize, DayOffersRoundTripAndValidate) {
  const auto c = small_config();
  const auto& fm = small_fit();
  const auto offers = optimize_day(c, fm, Method::proposed, 2);
  ASSERT_EQ(offers.size(), 24u);
  for (const auto& o : offers) {
    ASSERT_TRUE(o.ok()) << o.hour << ' ' << o.message;
    EXPECT_GE(o.r_ha, 0.0);
    EXPECT_LE(o.p_ha + o.r_ha, c.building.power_max + 1e-9);
  }
  std::stringstream ss;
  write_offers({fm.config_hash, Method::proposed, 0.05, offers}, ss);
  const auto back = read_offers(ss);
  EXPECT_EQ(back.config_hash, fm.config_hash);
  EXPECT_EQ(back.method, Method::proposed);
  EXPECT_DOUBLE_EQ(back.epsilon, 0.05);
  ASSERT_EQ(back.offers.size(), 24u);
  for (std::size_t h = 0; h < 24; ++h) {
    EXPECT_EQ(back.offers[h].p_ha, offers[h].p_ha);
    EXPECT_EQ(back.offers[h].r_ha, offers[h].r_ha);
    EXPECT_EQ(back.offers[h].status, offers[h].status);
  }
  const auto hold = holdout_signals(c, fm);
  const auto reps = validate_day(c, offers, hold, 2);
  ASSERT_EQ(reps.size(), 24u);
  for (const auto& r : reps) EXPECT_EQ(r.samples, hold.size());
}

TEST(Optimize, OfferParseErrors) {
  std::istringstream no_header("hour,p_ha\n");
  EXPECT_THROW(read_offers(no_header), ParseError);
  std::istringstream bad_row(std::string("# config_hash=x method=b1 epsilon=0.1\n") + kOfferCsvHeader +
                             "\n0,1,0.5,2,optimal,3\n");
  try {
    read_offers(bad_row);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::istringstream bad_status(std::string("# config_hash=x method=b1 epsilon=0.1\n") + kOfferCsvHeader +
                                "\n0,1,0.5,2,great,3,1\n");
  EXPECT_THROW(read_offers(bad_status), ParseError);
  EXPECT_THROW(read_offers(fs::path("/nonexistent/offers.csv")), ConfigurationError);
}

TEST(Validate, HoldoutMismatchIsDetected) {
  auto c = small_config();
  auto fm = small_fit();
  fm.holdout_ids.front() = "1999-01-01T00";
  EXPECT_THROW(holdout_signals(c, fm), DataError);
}

TEST(Sweep, EpsilonAxisReusesFitAndOrdersCost) {
  auto c = small_config();
  const auto rows = run_sweep(c, SweepAxis::epsilon, {0.02, 0.1}, {Method::b1_gaussian}, false, 2);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_LE(rows[1].total_cost, rows[0].total_cost + 1e-6);
  std::ostringstream os;
  write_sweep_csv(rows, os);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), kSweepCsvHeader);
  EXPECT_THROW(run_sweep(c, SweepAxis::num_windows, {2.5}, {Method::proposed}, false), ParameterError);
  EXPECT_THROW(parse_sweep_axis("temperature"), ParameterError);
}

}  // namespace
}  // namespace hvacreg
