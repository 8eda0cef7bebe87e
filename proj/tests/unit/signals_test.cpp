#include <cmath>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "hvacreg/signals.hpp"

namespace hvacreg {
namespace {

std::string small_csv(int hours, double cadence = 900.0) {
  std::ostringstream os;
  os << "timestamp,value\n";
  for (int h = 0; h < hours; ++h)
    for (int k = 0; k < static_cast<int>(3600 / cadence); ++k) {
      const int sec = static_cast<int>(k * cadence);
      char buf[64];
      std::snprintf(buf, sizeof(buf), "2021-06-01T%02d:%02d:%02d,%g\n", h, sec / 60, sec % 60, 0.1 * k - 0.1);
      os << buf;
    }
  return os.str();
}

TEST(Ingest, GroupsRowsIntoHours) {
  std::istringstream in(small_csv(3));
  const auto set = ingest_csv(in, 900.0, nullptr);
  ASSERT_EQ(set.size(), 3u);
  EXPECT_EQ(set.traces[1].id.str(), "2021-06-01T01");
  ASSERT_EQ(set.traces[1].values.size(), 4u);
  EXPECT_DOUBLE_EQ(set.traces[1].values[3], 0.2);
}

TEST(Ingest, SkipsIncompleteHoursWithWarning) {
  std::string csv = small_csv(2);
  csv.erase(csv.rfind("2021-06-01T01:45"));
  std::istringstream in(csv);
  std::ostringstream warn;
  const auto set = ingest_csv(in, 900.0, &warn);
  EXPECT_EQ(set.size(), 1u);
  EXPECT_NE(warn.str().find("incomplete hour 2021-06-01T01"), std::string::npos);
}

TEST(Ingest, ReportsLineOfMalformedRows) {
  std::istringstream bad_ts("timestamp,value\n2021-06-01T00:00:00,0.1\nnot-a-time,0.2\n");
  try {
    ingest_csv(bad_ts, 900.0, nullptr);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::istringstream bad_val("timestamp,value\n2021-06-01T00:00:00,abc\n");
  EXPECT_THROW(ingest_csv(bad_val, 900.0, nullptr), ParseError);
  std::istringstream bad_header("time,value\n");
  EXPECT_THROW(ingest_csv(bad_header, 900.0, nullptr), ParseError);
}

TEST(Ingest, RejectsOutOfRangeAndDuplicates) {
  std::istringstream range("timestamp,value\n2021-06-01T00:00:00,1.5\n");
  EXPECT_THROW(ingest_csv(range, 900.0, nullptr), DataError);
  std::istringstream dup("timestamp,value\n2021-06-01T00:00:00,0.1\n2021-06-01T00:00:00,0.2\n");
  EXPECT_THROW(ingest_csv(dup, 900.0, nullptr), DataError);
  std::istringstream misaligned("timestamp,value\n2021-06-01T00:00:07,0.1\n");
  EXPECT_THROW(ingest_csv(misaligned, 900.0, nullptr), DataError);
}

TEST(Ingest, RoundTripsWrittenCsv) {
  SynthParams p;
  p.cadence_seconds = 60.0;
  const auto set = synthesize(SynthKind::mean_reverting, 3, 5, p);
  std::ostringstream os;
  os.precision(17);
  write_signal_csv(set, os);
  std::istringstream in(os.str());
  const auto back = ingest_csv(in, 60.0, nullptr);
  ASSERT_EQ(back.size(), set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    EXPECT_EQ(back.traces[i].id, set.traces[i].id);
    for (std::size_t l = 0; l < 60; ++l) EXPECT_DOUBLE_EQ(back.traces[i].values[l], set.traces[i].values[l]);
  }
}

TEST(Cadence, MustDivideTheHour) {
  EXPECT_EQ(slots_for_cadence(2.0), 1800u);
  EXPECT_THROW(slots_for_cadence(7.0), ParameterError);
  EXPECT_THROW(slots_for_cadence(0.0), ParameterError);
}

TEST(Synthesize, IsDeterministicAndBounded) {
  const auto a = synthesize(SynthKind::bimodal_burst, 42, 30);
  const auto b = synthesize(SynthKind::bimodal_burst, 42, 30);
  const auto c = synthesize(SynthKind::bimodal_burst, 43, 30);
  ASSERT_EQ(a.size(), 30u);
  EXPECT_EQ(a.traces[7].values, b.traces[7].values);
  EXPECT_NE(a.traces[7].values, c.traces[7].values);
  for (const auto& t : a.traces) {
    EXPECT_EQ(t.values.size(), 1800u);
    for (double v : t.values) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Synthesize, HourIdsCrossDayAndMonthBoundaries) {
  SynthParams p;
  p.cadence_seconds = 1800.0;
  p.start_date = "2020-02-28";
  const auto s = synthesize(SynthKind::constant, 1, 49, p);
  EXPECT_EQ(s.traces[0].id.str(), "2020-02-28T00");
  EXPECT_EQ(s.traces[24].id.str(), "2020-02-29T00");
  EXPECT_EQ(s.traces[48].id.str(), "2020-03-01T00");
}

TEST(Synthesize, ConstantKindAndMileage) {
  SynthParams p;
  p.level = 0.4;
  const auto s = synthesize(SynthKind::constant, 1, 2, p);
  EXPECT_NEAR(mean_signal(s.traces[0]), 0.4, 1e-12);
  EXPECT_DOUBLE_EQ(mileage(s.traces[0]), 0.0);
  SignalTrace t{{"2020-01-01", 0}, {0.0, 1.0, -1.0, -0.5}};
  EXPECT_DOUBLE_EQ(mileage(t), 3.5);
}

TEST(Synthesize, BurstHoursAreBimodal) {
  SynthParams p;
  p.burst_prob = 1.0;
  const auto s = synthesize(SynthKind::bimodal_burst, 9, 40, p);
  int sustained = 0;
  for (const auto& t : s.traces) {
    std::size_t near_level = 0;
    for (double v : t.values) near_level += std::abs(std::abs(v) - p.burst_level) < 0.3 ? 1 : 0;
    sustained += near_level >= static_cast<std::size_t>(p.burst_min_fraction * 1800 * 0.9) ? 1 : 0;
  }
  EXPECT_EQ(sustained, 40);
}

TEST(Synthesize, RejectsBadParameters) {
  SynthParams p;
  p.phi = 1.0;
  EXPECT_THROW(synthesize(SynthKind::mean_reverting, 1, 1, p), ParameterError);
  p = {};
  p.level = 2.0;
  EXPECT_THROW(synthesize(SynthKind::constant, 1, 1, p), ParameterError);
  EXPECT_THROW(parse_synth_kind("pink_noise"), ParameterError);
}

TEST(HourIds, ParseAndOrder) {
  const auto id = parse_hour_id("2021-12-31T23");
  EXPECT_EQ(id.date, "2021-12-31");
  EXPECT_EQ(id.hour, 23);
  EXPECT_LT(parse_hour_id("2021-12-31T22"), id);
  EXPECT_THROW(parse_hour_id("2021-12-31T24"), DataError);
  EXPECT_THROW(parse_hour_id("2021-12-31 23"), DataError);
}

}  // namespace
}  // namespace hvacreg
