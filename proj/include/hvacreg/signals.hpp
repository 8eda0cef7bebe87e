#pragma once

// Regulation-signal traces: CSV ingest, synthetic generators and the scalar
// per-hour statistics (mileage, mean signal).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hvacreg/errors.hpp"

namespace hvacreg {

struct HourId {
  std::string date;  ///< YYYY-MM-DD
  int hour = 0;      ///< 0..23

  std::string str() const {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "T%02d", hour);
    return date + buf;
  }
  auto operator<=>(const HourId&) const = default;
};

inline HourId parse_hour_id(const std::string& s) {
  // YYYY-MM-DDTHH
  if (s.size() != 13 || s[10] != 'T') throw DataError("bad hour id: " + s);
  HourId id{s.substr(0, 10), std::stoi(s.substr(11, 2))};
  if (id.hour < 0 || id.hour > 23) throw DataError("bad hour id: " + s);
  return id;
}

struct SignalTrace {
  HourId id;
  std::vector<double> values;
};

struct SignalSet {
  std::vector<SignalTrace> traces;
  std::string source;
  double cadence_seconds = 2.0;

  std::size_t slots() const { return static_cast<std::size_t>(std::lround(3600.0 / cadence_seconds)); }
  std::size_t size() const { return traces.size(); }
};

inline std::size_t slots_for_cadence(double cadence) {
  if (!(cadence > 0.0)) throw ParameterError("cadence must be > 0");
  const double n = 3600.0 / cadence;
  const auto r = std::llround(n);
  if (r < 1 || std::abs(n - static_cast<double>(r)) > 1e-9) throw ParameterError("cadence must divide 3600 evenly");
  return static_cast<std::size_t>(r);
}

/// Sum of absolute consecutive differences.
inline double mileage(const SignalTrace& trace) {
  double m = 0.0;
  for (std::size_t l = 1; l < trace.values.size(); ++l) m += std::abs(trace.values[l] - trace.values[l - 1]);
  return m;
}

inline double mean_signal(const SignalTrace& trace) {
  if (trace.values.empty()) return 0.0;
  double s = 0.0;
  for (double v : trace.values) s += v;
  return s / static_cast<double>(trace.values.size());
}

namespace detail {

struct ParsedTimestamp {
  std::string date;
  int hour = 0;
  int minute = 0;
  double second = 0.0;
};

inline std::optional<ParsedTimestamp> parse_iso8601(const std::string& ts) {
  // YYYY-MM-DD[T ]HH:MM:SS[.fff][Z|±HH:MM]
  if (ts.size() < 19) return std::nullopt;
  if (ts[4] != '-' || ts[7] != '-' || (ts[10] != 'T' && ts[10] != ' ') || ts[13] != ':' || ts[16] != ':')
    return std::nullopt;
  auto digits = [&](std::size_t from, std::size_t n) {
    for (std::size_t i = from; i < from + n; ++i)
      if (ts[i] < '0' || ts[i] > '9') return false;
    return true;
  };
  if (!digits(0, 4) || !digits(5, 2) || !digits(8, 2) || !digits(11, 2) || !digits(14, 2) || !digits(17, 2))
    return std::nullopt;
  ParsedTimestamp p;
  p.date = ts.substr(0, 10);
  p.hour = std::stoi(ts.substr(11, 2));
  p.minute = std::stoi(ts.substr(14, 2));
  std::size_t pos = 19;
  double frac = 0.0;
  if (pos < ts.size() && ts[pos] == '.') {
    std::size_t end = pos + 1;
    while (end < ts.size() && ts[end] >= '0' && ts[end] <= '9') ++end;
    if (end == pos + 1) return std::nullopt;
    frac = std::stod("0" + ts.substr(pos, end - pos));
    pos = end;
  }
  p.second = std::stoi(ts.substr(17, 2)) + frac;
  if (pos < ts.size()) {
    const std::string tz = ts.substr(pos);
    const bool ok = tz == "Z" || ((tz[0] == '+' || tz[0] == '-') && tz.size() == 6 && tz[3] == ':');
    if (!ok) return std::nullopt;
  }
  if (p.hour > 23 || p.minute > 59 || p.second >= 61.0) return std::nullopt;
  return p;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Reads `timestamp,value` rows and groups them into hour-long traces.
/// Incomplete hours are skipped with a warning on `warn`.
inline SignalSet ingest_csv(std::istream& in, double cadence_seconds, std::ostream* warn = &std::cerr,
                            const std::string& source = "csv") {
  const std::size_t slots = slots_for_cadence(cadence_seconds);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw ParseError("empty file, expected header 'timestamp,value'", 1);
  ++line_no;
  if (detail::trim(line) != "timestamp,value") throw ParseError("expected header 'timestamp,value'", line_no);

  std::map<HourId, std::vector<std::optional<double>>> hours;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto comma = t.find(',');
    if (comma == std::string::npos || t.find(',', comma + 1) != std::string::npos)
      throw ParseError("expected two fields 'timestamp,value'", line_no);
    const auto ts = detail::parse_iso8601(detail::trim(t.substr(0, comma)));
    if (!ts) throw ParseError("malformed ISO-8601 timestamp", line_no);
    const std::string vs = detail::trim(t.substr(comma + 1));
    double value = 0.0;
    try {
      std::size_t used = 0;
      value = std::stod(vs, &used);
      if (used != vs.size()) throw std::invalid_argument(vs);
    } catch (const std::exception&) {
      throw ParseError("malformed decimal value '" + vs + "'", line_no);
    }
    if (!(value >= -1.0 && value <= 1.0))
      throw DataError("value " + vs + " out of [-1,1] at row " + std::to_string(line_no));
    const double sec_of_hour = ts->minute * 60.0 + ts->second;
    const double slot_f = sec_of_hour / cadence_seconds;
    const auto slot = static_cast<long long>(std::llround(slot_f));
    if (std::abs(slot_f - static_cast<double>(slot)) > 1e-6 || slot < 0 || static_cast<std::size_t>(slot) >= slots)
      throw DataError("timestamp not aligned to cadence at row " + std::to_string(line_no));
    auto& bucket = hours[HourId{ts->date, ts->hour}];
    if (bucket.empty()) bucket.resize(slots);
    if (bucket[static_cast<std::size_t>(slot)])
      throw DataError("duplicate timestamp at row " + std::to_string(line_no));
    bucket[static_cast<std::size_t>(slot)] = value;
  }

  SignalSet set;
  set.source = source;
  set.cadence_seconds = cadence_seconds;
  for (auto& [id, bucket] : hours) {
    const auto present = std::count_if(bucket.begin(), bucket.end(), [](const auto& v) { return v.has_value(); });
    if (static_cast<std::size_t>(present) != slots) {
      if (warn) *warn << "warning: skipping incomplete hour " << id.str() << " (" << present << "/" << slots << " samples)\n";
      continue;
    }
    SignalTrace tr{id, {}};
    tr.values.reserve(slots);
    for (const auto& v : bucket) tr.values.push_back(*v);
    set.traces.push_back(std::move(tr));
  }
  return set;
}

inline SignalSet ingest_csv(const std::string& path, double cadence_seconds, std::ostream* warn = &std::cerr) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot open signal file: " + path);
  return ingest_csv(in, cadence_seconds, warn, path);
}

inline void write_signal_csv(const SignalSet& set, std::ostream& out) {
  out << "timestamp,value\n";
  char buf[64];
  for (const auto& tr : set.traces) {
    for (std::size_t l = 0; l < tr.values.size(); ++l) {
      const double sec = static_cast<double>(l) * set.cadence_seconds;
      const int minute = static_cast<int>(sec / 60.0);
      const double second = sec - minute * 60.0;
      std::snprintf(buf, sizeof(buf), "%sT%02d:%02d:%02d", tr.id.date.c_str(), tr.id.hour, minute,
                    static_cast<int>(second));
      out << buf << ',' << tr.values[l] << '\n';
    }
  }
}

enum class SynthKind { mean_reverting, bimodal_burst, constant };

inline SynthKind parse_synth_kind(const std::string& s) {
  if (s == "mean_reverting") return SynthKind::mean_reverting;
  if (s == "bimodal_burst") return SynthKind::bimodal_burst;
  if (s == "constant") return SynthKind::constant;
  throw ParameterError("unknown synthesizer kind: " + s);
}

inline std::string to_string(SynthKind k) {
  switch (k) {
    case SynthKind::mean_reverting: return "mean_reverting";
    case SynthKind::bimodal_burst: return "bimodal_burst";
    case SynthKind::constant: return "constant";
  }
  return "?";
}

/// Generator parameters. The mean-reverting base is a clipped AR(1) process
/// s_l = μ + φ(s_{l−1} − μ) + σ√(1−φ²) ξ. Bursts replace a random contiguous
/// stretch of the hour with a sustained level ± noise.
struct SynthParams {
  double level = 0.0;  ///< constant kind
  double mean = 0.0;
  double phi = 0.98;
  double sigma = 0.35;
  double burst_prob = 0.3;
  double burst_level = 0.85;
  double burst_noise = 0.08;
  double burst_negative_fraction = 0.25;
  double burst_min_fraction = 0.35;  ///< burst duration as fraction of the hour
  double burst_max_fraction = 0.6;
  double cadence_seconds = 2.0;
  std::string start_date = "2020-01-01";

  void validate(SynthKind kind) const {
    slots_for_cadence(cadence_seconds);
    if (kind == SynthKind::constant && !(level >= -1.0 && level <= 1.0))
      throw ParameterError("synthesize: constant level must be in [-1,1]");
    if (kind != SynthKind::constant) {
      if (!(phi >= 0.0 && phi < 1.0)) throw ParameterError("synthesize: phi must be in [0,1)");
      if (!(sigma >= 0.0)) throw ParameterError("synthesize: sigma must be >= 0");
    }
    if (kind == SynthKind::bimodal_burst) {
      if (!(burst_prob >= 0.0 && burst_prob <= 1.0)) throw ParameterError("synthesize: burst_prob must be in [0,1]");
      if (!(burst_min_fraction > 0.0 && burst_min_fraction <= burst_max_fraction && burst_max_fraction <= 1.0))
        throw ParameterError("synthesize: burst duration fractions must satisfy 0 < min <= max <= 1");
    }
  }
};

namespace detail {

/// Civil date arithmetic (days since 1970-01-01), Howard Hinnant's algorithm.
inline long days_from_civil(int y, unsigned m, unsigned d) {
  y -= m <= 2;
  const long era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<long>(doe) - 719468;
}

inline std::string civil_from_days(long z) {
  z += 719468;
  const long era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const long y = static_cast<long>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%04ld-%02u-%02u", y + (m <= 2), m, d);
  return buf;
}

inline HourId hour_id_at(const std::string& start_date, std::size_t k) {
  const int y = std::stoi(start_date.substr(0, 4));
  const unsigned m = static_cast<unsigned>(std::stoi(start_date.substr(5, 2)));
  const unsigned d = static_cast<unsigned>(std::stoi(start_date.substr(8, 2)));
  const long base = days_from_civil(y, m, d);
  return HourId{civil_from_days(base + static_cast<long>(k / 24)), static_cast<int>(k % 24)};
}

}  // namespace detail

/// Deterministic synthetic signal set; `hours` consecutive hour traces starting
/// at params.start_date 00:00.
inline SignalSet synthesize(SynthKind kind, std::uint64_t seed, std::size_t hours, const SynthParams& params = {}) {
  params.validate(kind);
  const std::size_t slots = slots_for_cadence(params.cadence_seconds);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto clip = [](double v) { return std::clamp(v, -1.0, 1.0); };

  SignalSet set;
  set.source = "synthetic:" + to_string(kind) + ":" + std::to_string(seed);
  set.cadence_seconds = params.cadence_seconds;
  set.traces.reserve(hours);
  const double innov = params.sigma * std::sqrt(1.0 - params.phi * params.phi);
  for (std::size_t k = 0; k < hours; ++k) {
    SignalTrace tr{detail::hour_id_at(params.start_date, k), std::vector<double>(slots)};
    if (kind == SynthKind::constant) {
      std::fill(tr.values.begin(), tr.values.end(), params.level);
    } else {
      double x = params.mean + params.sigma * normal(rng);
      for (std::size_t l = 0; l < slots; ++l) {
        if (l > 0) x = params.mean + params.phi * (x - params.mean) + innov * normal(rng);
        tr.values[l] = clip(x);
      }
      if (kind == SynthKind::bimodal_burst && unif(rng) < params.burst_prob) {
        const double frac = params.burst_min_fraction + (params.burst_max_fraction - params.burst_min_fraction) * unif(rng);
        const auto dur = std::max<std::size_t>(1, static_cast<std::size_t>(frac * static_cast<double>(slots)));
        const auto start = static_cast<std::size_t>(unif(rng) * static_cast<double>(slots - dur + 1));
        const double sign = unif(rng) < params.burst_negative_fraction ? -1.0 : 1.0;
        for (std::size_t l = start; l < std::min(slots, start + dur); ++l)
          tr.values[l] = clip(sign * params.burst_level + params.burst_noise * normal(rng));
      }
    }
    set.traces.push_back(std::move(tr));
  }
  return set;
}

}  // namespace hvacreg
