#pragma once

// Consumption series ingestion, min-max scaling, supervised windowing,
// chronological splits, daily-mean summaries and the synthetic population
// generator used as the default test substrate.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedload/error.hpp"
#include "fedload/json_util.hpp"
#include "fedload/rng.hpp"

namespace fedload {

inline constexpr int kIntervalMinutes = 15;
inline constexpr std::size_t kSamplesPerDay = 96;
inline constexpr std::int64_t kIntervalSeconds = kIntervalMinutes * 60;

// ---------------------------------------------------------------------------
// Timestamps

// Parses "YYYY-MM-DDTHH:MM:SS" with optional 'Z' or "+00:00" suffix; a space
// may replace 'T'. Returns seconds since the Unix epoch.
inline std::int64_t parse_utc_timestamp(std::string_view s) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  char sep = 0;
  int consumed = 0;
  std::string buf(s);
  if (std::sscanf(buf.c_str(), "%4d-%2d-%2d%c%2d:%2d:%2d%n", &y, &mo, &d, &sep,
                  &h, &mi, &sec, &consumed) != 7 ||
      (sep != 'T' && sep != ' ')) {
    throw DataError("bad timestamp '" + buf + "'");
  }
  std::string_view rest = s.substr(static_cast<std::size_t>(consumed));
  if (!(rest.empty() || rest == "Z" || rest == "+00:00")) {
    throw DataError("timestamp '" + buf + "' is not UTC");
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)},
                           day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 59) {
    throw DataError("bad timestamp '" + buf + "'");
  }
  const auto days_since = sys_days{ymd}.time_since_epoch().count();
  return static_cast<std::int64_t>(days_since) * 86400 + h * 3600 + mi * 60 +
         sec;
}

inline std::string format_utc_timestamp(std::int64_t epoch_seconds) {
  using namespace std::chrono;
  const auto day_count = static_cast<int>(
      (epoch_seconds >= 0 ? epoch_seconds : epoch_seconds - 86399) / 86400);
  const std::int64_t rem = epoch_seconds - std::int64_t{day_count} * 86400;
  const year_month_day ymd{sys_days{days{day_count}}};
  char out[32];
  std::snprintf(out, sizeof(out), "%04d-%02u-%02uT%02d:%02d:%02dZ",
                static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()), static_cast<int>(rem / 3600),
                static_cast<int>(rem % 3600 / 60), static_cast<int>(rem % 60));
  return out;
}

// ---------------------------------------------------------------------------
// Domain types

struct ConsumptionSeries {
  std::string building_id;
  std::int64_t start = 0;  // seconds since epoch, UTC
  int interval_minutes = kIntervalMinutes;
  std::vector<double> values;  // kWh per interval

  std::size_t size() const { return values.size(); }
  std::size_t whole_days() const { return values.size() / kSamplesPerDay; }
};

inline void validate(const ConsumptionSeries& s) {
  if (s.interval_minutes != kIntervalMinutes) {
    throw DataError(s.building_id + ": interval must be 15 minutes");
  }
  if (s.values.empty()) throw DataError(s.building_id + ": no samples");
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    if (!std::isfinite(s.values[i]) || s.values[i] < 0.0) {
      throw DataError(s.building_id + ": invalid kWh at index " +
                      std::to_string(i));
    }
  }
}

struct NormParams {
  double min_kwh = 0.0;
  double max_kwh = 0.0;

  double span() const { return max_kwh - min_kwh; }

  double normalize(double kwh) const {
    const double range = span();
    return range > 0.0 ? (kwh - min_kwh) / range : 0.0;
  }

  double denormalize(double unit) const { return min_kwh + unit * span(); }

  friend bool operator==(const NormParams&, const NormParams&) = default;
};

// N samples of `lookback` inputs and `horizon` targets, row-major. Row i was
// cut at series offset `first_offset + i`.
struct WindowedDataset {
  std::string building_id;
  std::size_t lookback = 0;
  std::size_t horizon = 0;
  std::size_t first_offset = 0;
  std::vector<double> inputs;
  std::vector<double> targets;
  NormParams norm;

  std::size_t size() const { return lookback == 0 ? 0 : inputs.size() / lookback; }
  bool empty() const { return size() == 0; }

  std::span<const double> input(std::size_t i) const {
    return {inputs.data() + i * lookback, lookback};
  }
  std::span<const double> target(std::size_t i) const {
    return {targets.data() + i * horizon, horizon};
  }

  // Rows [begin, end) as a new dataset with the same normalization.
  WindowedDataset slice(std::size_t begin, std::size_t end) const {
    WindowedDataset out;
    out.building_id = building_id;
    out.lookback = lookback;
    out.horizon = horizon;
    out.first_offset = first_offset + begin;
    out.norm = norm;
    out.inputs.assign(inputs.begin() + static_cast<std::ptrdiff_t>(begin * lookback),
                      inputs.begin() + static_cast<std::ptrdiff_t>(end * lookback));
    out.targets.assign(targets.begin() + static_cast<std::ptrdiff_t>(begin * horizon),
                       targets.begin() + static_cast<std::ptrdiff_t>(end * horizon));
    return out;
  }
};

struct SummaryVector {
  std::string building_id;
  std::vector<double> daily_means;  // kWh

  std::size_t dim() const { return daily_means.size(); }
};

// ---------------------------------------------------------------------------
// CSV ingestion

inline ConsumptionSeries ingest_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");

  ConsumptionSeries series;
  series.building_id = path.stem().string();
  const std::string where = path.string();

  auto trim = [](std::string& line) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) {
      line.pop_back();
    }
  };

  std::string line;
  if (!std::getline(in, line)) throw DataError(where + ": no samples");
  trim(line);
  if (line != "timestamp,kwh") {
    throw DataError(where + ": expected header 'timestamp,kwh'");
  }

  std::int64_t prev = 0;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    trim(line);
    if (line.empty()) continue;
    ++row;
    auto fail = [&](const std::string& why) {
      throw DataError(where + ": row " + std::to_string(row) + ": " + why);
    };
    const auto comma = line.find(',');
    if (comma == std::string::npos) fail("expected 'timestamp,kwh'");
    std::int64_t ts = 0;
    try {
      ts = parse_utc_timestamp(std::string_view(line).substr(0, comma));
    } catch (const DataError& e) {
      fail(e.what());
    }
    double kwh = 0.0;
    const char* first = line.data() + comma + 1;
    const char* last = line.data() + line.size();
    auto [ptr, ec] = std::from_chars(first, last, kwh);
    if (ec != std::errc() || ptr != last) fail("cannot parse kWh value");
    if (!std::isfinite(kwh)) fail("non-finite kWh value");
    if (kwh < 0.0) fail("negative kWh value");

    if (row == 1) {
      series.start = ts;
    } else if (ts == prev) {
      fail("duplicate timestamp");
    } else if (ts < prev) {
      fail("timestamp out of order");
    } else if (ts - prev != kIntervalSeconds) {
      fail("gap of " + std::to_string((ts - prev) / 60) +
           " minutes (expected 15)");
    }
    prev = ts;
    series.values.push_back(kwh);
  }
  if (series.values.empty()) throw DataError(where + ": no samples");
  return series;
}

inline void write_csv(const ConsumptionSeries& series,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << "timestamp,kwh\n";
  char buf[64];
  for (std::size_t i = 0; i < series.values.size(); ++i) {
    const auto ts = series.start + static_cast<std::int64_t>(i) * kIntervalSeconds;
    // Shortest round-trip representation keeps files bit-faithful.
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), series.values[i]);
    out << format_utc_timestamp(ts) << ',' << std::string_view(buf, ptr) << '\n';
  }
  if (!out) throw ConfigError("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Normalization and windowing

inline std::pair<std::vector<double>, NormParams> minmax_normalize(
    const ConsumptionSeries& series) {
  if (series.values.empty()) throw DataError(series.building_id + ": no samples");
  const auto [lo, hi] =
      std::minmax_element(series.values.begin(), series.values.end());
  NormParams norm{*lo, *hi};
  std::vector<double> out(series.values.size());
  std::transform(series.values.begin(), series.values.end(), out.begin(),
                 [&](double v) { return norm.normalize(v); });
  return {std::move(out), norm};
}

inline WindowedDataset make_windows(std::span<const double> values,
                                    std::size_t lookback, std::size_t horizon) {
  if (lookback < 1 || horizon < 1) {
    throw ConfigError("lookback and horizon must be >= 1");
  }
  WindowedDataset ds;
  ds.lookback = lookback;
  ds.horizon = horizon;
  const std::size_t span = lookback + horizon;
  const std::size_t n = values.size() >= span ? values.size() - span + 1 : 0;
  ds.inputs.reserve(n * lookback);
  ds.targets.reserve(n * horizon);
  for (std::size_t i = 0; i < n; ++i) {
    ds.inputs.insert(ds.inputs.end(), values.begin() + i,
                     values.begin() + i + lookback);
    ds.targets.insert(ds.targets.end(), values.begin() + i + lookback,
                      values.begin() + i + span);
  }
  return ds;
}

struct SplitResult {
  WindowedDataset train;
  WindowedDataset test;
  std::string warning;  // non-empty when one side came out empty
};

// Chronological split: the first floor(N * fraction) rows train, the rest test.
inline SplitResult train_test_split(const WindowedDataset& ds,
                                    double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }
  const std::size_t n = ds.size();
  const auto n_train = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) * train_fraction));
  SplitResult out{ds.slice(0, n_train), ds.slice(n_train, n), {}};
  if (out.train.empty() || out.test.empty()) {
    out.warning = ds.building_id + ": split of " + std::to_string(n) +
                  " samples leaves " + std::to_string(out.train.size()) +
                  " train / " + std::to_string(out.test.size()) + " test";
  }
  return out;
}

// Full per-client preparation: normalize over the whole series, window,
// then split chronologically.
inline SplitResult prepare_client(const ConsumptionSeries& series, std::size_t lookback,
                                  std::size_t horizon, double train_fraction) {
  validate(series);
  auto [unit, norm] = minmax_normalize(series);
  WindowedDataset ds = make_windows(unit, lookback, horizon);
  ds.building_id = series.building_id;
  ds.norm = norm;
  return train_test_split(ds, train_fraction);
}

// Per-day means over consecutive 96-sample blocks from series start.
inline std::vector<double> daily_means(const ConsumptionSeries& series,
                                       std::size_t days) {
  std::vector<double> means(days);
  for (std::size_t d = 0; d < days; ++d) {
    double sum = 0.0;
    for (std::size_t k = 0; k < kSamplesPerDay; ++k) {
      sum += series.values[d * kSamplesPerDay + k];
    }
    means[d] = sum / static_cast<double>(kSamplesPerDay);
  }
  return means;
}

inline SummaryVector consumption_summary(const ConsumptionSeries& series,
                                         std::size_t period_days) {
  if (period_days == 0) throw ConfigError("period_days must be >= 1");
  if (series.whole_days() < period_days) {
    throw DataError(series.building_id + ": summary needs " +
                    std::to_string(period_days) + " days, only " +
                    std::to_string(series.whole_days()) + " available");
  }
  return {series.building_id, daily_means(series, period_days)};
}

// ---------------------------------------------------------------------------
// Synthetic population

struct SynthClass {
  double base_kwh = 1.0;
  double amplitude = 0.0;
  double week_factor = 1.0;  // multiplier on the daily swing on weekend days
  double noise_sigma = 0.0;
  std::size_t n_clients = 1;
  double scale_jitter = 0.0;  // per-client scale drawn from 1 +/- jitter
  std::size_t n_holdout = 0;  // extra clients of this class tagged for testing
};

struct SynthConfig {
  std::vector<SynthClass> classes;
  std::size_t days = 30;
  std::uint64_t seed = 0;
  std::int64_t start = 1514764800;  // 2018-01-01T00:00:00Z
};

struct SyntheticBuilding {
  ConsumptionSeries series;
  std::size_t class_index = 0;
  bool holdout = false;
};

inline void validate(const SynthConfig& cfg) {
  if (cfg.classes.empty()) throw ConfigError("generator: no client classes");
  if (cfg.days == 0) throw ConfigError("generator: days must be >= 1");
  for (std::size_t c = 0; c < cfg.classes.size(); ++c) {
    const auto& k = cfg.classes[c];
    const std::string tag = "generator: class " + std::to_string(c);
    if (!(k.base_kwh > 0.0)) throw ConfigError(tag + ": base_kwh must be > 0");
    if (k.n_clients == 0) throw ConfigError(tag + ": n_clients must be >= 1");
    if (k.noise_sigma < 0.0) throw ConfigError(tag + ": noise_sigma < 0");
    if (k.scale_jitter < 0.0 || k.scale_jitter >= 1.0) {
      throw ConfigError(tag + ": scale_jitter must lie in [0, 1)");
    }
  }
}

inline std::string synth_building_id(std::size_t cls, std::size_t j) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "c%zu_b%03zu", cls, j);
  return buf;
}

// Value at step t for class c, client j:
//   scale_j * (base + amp * sin(2 pi t / 96) * weekmod(t)) + N(0, sigma)
// clamped at zero. weekmod is 1 on weekdays and week_factor on days 5 and 6
// of each 7-day block.
inline std::vector<SyntheticBuilding> synth_population(const SynthConfig& cfg,
                                                       std::uint64_t seed) {
  validate(cfg);
  std::vector<SyntheticBuilding> out;
  const std::size_t n = cfg.days * kSamplesPerDay;
  for (std::size_t c = 0; c < cfg.classes.size(); ++c) {
    const SynthClass& k = cfg.classes[c];
    const std::size_t total = k.n_clients + k.n_holdout;
    for (std::size_t j = 0; j < total; ++j) {
      Rng rng(derive_seed({seed, c, j}));
      const double scale = 1.0 + k.scale_jitter * rng.uniform(-1.0, 1.0);
      SyntheticBuilding b;
      b.class_index = c;
      b.holdout = j >= k.n_clients;
      b.series.building_id = synth_building_id(c, j);
      b.series.start = cfg.start;
      b.series.values.resize(n);
      for (std::size_t t = 0; t < n; ++t) {
        const std::size_t dow = (t / kSamplesPerDay) % 7;
        const double weekmod = dow >= 5 ? k.week_factor : 1.0;
        const double phase = 2.0 * std::numbers::pi *
                             static_cast<double>(t % kSamplesPerDay) /
                             static_cast<double>(kSamplesPerDay);
        double v = scale * (k.base_kwh + k.amplitude * std::sin(phase) * weekmod);
        if (k.noise_sigma > 0.0) v += k.noise_sigma * rng.normal();
        b.series.values[t] = std::max(v, 0.0);
      }
      out.push_back(std::move(b));
    }
  }
  return out;
}

inline SynthConfig synth_config_from_json(const json& j) {
  detail::reject_unknown_keys(j, {"classes", "days", "seed", "start"},
                              "generator");
  SynthConfig cfg;
  detail::read_opt(j, "days", cfg.days, "generator");
  detail::read_opt(j, "seed", cfg.seed, "generator");
  if (auto it = j.find("start"); it != j.end()) {
    try {
      cfg.start = parse_utc_timestamp(it->get<std::string>());
    } catch (const std::exception& e) {
      throw ConfigError(std::string("generator.start: ") + e.what());
    }
  }
  auto it = j.find("classes");
  if (it == j.end() || !it->is_array()) {
    throw ConfigError("generator: 'classes' array required");
  }
  for (const auto& cj : *it) {
    detail::reject_unknown_keys(cj,
                                {"base_kwh", "amplitude", "week_factor",
                                 "noise_sigma", "n_clients", "scale_jitter",
                                 "n_holdout"},
                                "generator.classes[]");
    SynthClass k;
    const char* ctx = "generator.classes[]";
    detail::read_opt(cj, "base_kwh", k.base_kwh, ctx);
    detail::read_opt(cj, "amplitude", k.amplitude, ctx);
    detail::read_opt(cj, "week_factor", k.week_factor, ctx);
    detail::read_opt(cj, "noise_sigma", k.noise_sigma, ctx);
    detail::read_opt(cj, "n_clients", k.n_clients, ctx);
    detail::read_opt(cj, "scale_jitter", k.scale_jitter, ctx);
    detail::read_opt(cj, "n_holdout", k.n_holdout, ctx);
    cfg.classes.push_back(k);
  }
  return cfg;
}

inline json to_json(const SynthConfig& cfg) {
  json classes = json::array();
  for (const auto& k : cfg.classes) {
    classes.push_back({{"base_kwh", k.base_kwh},
                       {"amplitude", k.amplitude},
                       {"week_factor", k.week_factor},
                       {"noise_sigma", k.noise_sigma},
                       {"n_clients", k.n_clients},
                       {"scale_jitter", k.scale_jitter},
                       {"n_holdout", k.n_holdout}});
  }
  return {{"classes", classes},
          {"days", cfg.days},
          {"seed", cfg.seed},
          {"start", format_utc_timestamp(cfg.start)}};
}

// ---------------------------------------------------------------------------
// Manifest: one JSON document listing per-building CSV files.

enum class Role { train, test };

struct ManifestEntry {
  std::string id;
  std::string file;  // relative to the manifest's directory
  std::string state;
  Role role = Role::train;
};

struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestEntry> entries;

  std::filesystem::path resolve(const ManifestEntry& e) const {
    return base_dir / e.file;
  }
};

inline Manifest read_manifest(const std::filesystem::path& path) {
  const json j = detail::load_json_file(path.string());
  detail::reject_unknown_keys(j, {"buildings"}, "manifest");
  Manifest m;
  m.base_dir = path.parent_path();
  auto it = j.find("buildings");
  if (it == j.end() || !it->is_array()) {
    throw ConfigError("manifest: 'buildings' array required");
  }
  for (const auto& bj : *it) {
    detail::reject_unknown_keys(bj, {"id", "file", "state", "role"},
                                "manifest.buildings[]");
    ManifestEntry e;
    detail::read_opt(bj, "id", e.id, "manifest.buildings[]");
    detail::read_opt(bj, "file", e.file, "manifest.buildings[]");
    detail::read_opt(bj, "state", e.state, "manifest.buildings[]");
    std::string role = "train";
    detail::read_opt(bj, "role", role, "manifest.buildings[]");
    if (role == "train") {
      e.role = Role::train;
    } else if (role == "test") {
      e.role = Role::test;
    } else {
      throw ConfigError("manifest: unknown role '" + role + "'");
    }
    if (e.file.empty()) throw ConfigError("manifest: entry without 'file'");
    if (e.id.empty()) e.id = std::filesystem::path(e.file).stem().string();
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  json buildings = json::array();
  for (const auto& e : m.entries) {
    buildings.push_back({{"id", e.id},
                         {"file", e.file},
                         {"state", e.state},
                         {"role", e.role == Role::train ? "train" : "test"}});
  }
  detail::write_text_file(path.string(),
                          json{{"buildings", buildings}}.dump(2) + "\n");
}

}  // namespace fedload
