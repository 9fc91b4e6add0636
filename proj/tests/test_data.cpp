#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "support.hpp"

using namespace fedload;
using testing_support::TempDir;
using testing_support::make_series;
using testing_support::write_file;
using testing_support::read_file;

namespace {

std::string csv_rows(const std::vector<std::string>& stamps, const std::vector<std::string>& kwh) {
  std::string s = "timestamp,kwh\n";
  for (std::size_t i = 0; i < stamps.size(); ++i) s += stamps[i] + "," + kwh[i] + "\n";
  return s;
}

std::string error_of(const std::filesystem::path& p) {
  try {
    ingest_csv(p);
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Timestamp, RoundTrip) {
  const auto t = parse_utc_timestamp("2018-03-04T05:15:00Z");
  EXPECT_EQ(format_utc_timestamp(t), "2018-03-04T05:15:00Z");
  EXPECT_EQ(parse_utc_timestamp("1970-01-01T00:00:00Z"), 0);
  EXPECT_EQ(parse_utc_timestamp("2018-01-01 00:15:00"), 1514765700);
  EXPECT_THROW(parse_utc_timestamp("2018-13-01T00:00:00Z"), DataError);
  EXPECT_THROW(parse_utc_timestamp("yesterday"), DataError);
}

TEST(Ingest, ParsesFourRows) {
  TempDir dir;
  write_file(dir / "bldg_7.csv",
             csv_rows({"2018-01-01T00:00:00Z", "2018-01-01T00:15:00Z", "2018-01-01T00:30:00Z",
                       "2018-01-01T00:45:00Z"},
                      {"1.0", "2.0", "3.0", "4.0"}));
  const auto s = ingest_csv(dir / "bldg_7.csv");
  EXPECT_EQ(s.building_id, "bldg_7");
  EXPECT_EQ(s.values, (std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(s.interval_minutes, 15);
  EXPECT_EQ(s.start, parse_utc_timestamp("2018-01-01T00:00:00Z"));
}

TEST(Ingest, GapNamesRow) {
  TempDir dir;
  write_file(dir / "g.csv", csv_rows({"2018-01-01T00:00:00Z", "2018-01-01T00:15:00Z",
                                      "2018-01-01T00:45:00Z"},
                                     {"1", "1", "1"}));
  const std::string msg = error_of(dir / "g.csv");
  EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("gap"), std::string::npos) << msg;
}

TEST(Ingest, DuplicateOutOfOrderNegativeAndGarbage) {
  TempDir dir;
  write_file(dir / "d.csv", csv_rows({"2018-01-01T00:00:00Z", "2018-01-01T00:00:00Z"}, {"1", "1"}));
  EXPECT_NE(error_of(dir / "d.csv").find("duplicate"), std::string::npos);
  write_file(dir / "o.csv", csv_rows({"2018-01-01T00:15:00Z", "2018-01-01T00:00:00Z"}, {"1", "1"}));
  EXPECT_NE(error_of(dir / "o.csv").find("row 2"), std::string::npos);
  write_file(dir / "n.csv", csv_rows({"2018-01-01T00:00:00Z", "2018-01-01T00:15:00Z"}, {"1", "-0.5"}));
  const std::string neg = error_of(dir / "n.csv");
  EXPECT_NE(neg.find("row 2"), std::string::npos) << neg;
  EXPECT_NE(neg.find("negative"), std::string::npos) << neg;
  write_file(dir / "x.csv", csv_rows({"2018-01-01T00:00:00Z"}, {"abc"}));
  EXPECT_NE(error_of(dir / "x.csv").find("row 1"), std::string::npos);
  write_file(dir / "h.csv", "time,value\n2018-01-01T00:00:00Z,1\n");
  EXPECT_THROW(ingest_csv(dir / "h.csv"), DataError);
  EXPECT_THROW(ingest_csv(dir / "missing.csv"), DataError);
}

TEST(Ingest, HeaderOnlyIsNoSamples) {
  TempDir dir;
  write_file(dir / "e.csv", "timestamp,kwh\n");
  EXPECT_NE(error_of(dir / "e.csv").find("no samples"), std::string::npos);
}

TEST(Ingest, WriteReadRoundTripIsExact) {
  TempDir dir;
  Rng rng(3);
  std::vector<double> v(500);
  for (auto& x : v) x = rng.uniform(0.0, 50.0);
  auto s = make_series(v, "rt");
  write_csv(s, dir / "rt.csv");
  const auto back = ingest_csv(dir / "rt.csv");
  EXPECT_EQ(back.values, s.values);
  EXPECT_EQ(back.start, s.start);
}

TEST(Normalize, Examples) {
  auto [unit, norm] = minmax_normalize(make_series({0, 5, 10}));
  EXPECT_EQ(unit, (std::vector<double>{0.0, 0.5, 1.0}));
  EXPECT_EQ(norm.min_kwh, 0.0);
  EXPECT_EQ(norm.max_kwh, 10.0);

  auto [flat, fnorm] = minmax_normalize(make_series({3, 3, 3}));
  EXPECT_EQ(flat, (std::vector<double>{0, 0, 0}));
  EXPECT_EQ(fnorm.min_kwh, 3.0);
  EXPECT_EQ(fnorm.max_kwh, 3.0);
  EXPECT_EQ(fnorm.denormalize(0.0), 3.0);
  EXPECT_EQ(fnorm.denormalize(0.7), 3.0);
}

TEST(Normalize, BoundsAndRoundTrip) {
  Rng rng(11);
  std::vector<double> v(1000);
  for (auto& x : v) x = rng.uniform(0.1, 80.0);
  auto [unit, norm] = minmax_normalize(make_series(v));
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_GE(unit[i], 0.0);
    EXPECT_LE(unit[i], 1.0);
    EXPECT_NEAR(norm.denormalize(unit[i]), v[i], 1e-12 * std::abs(v[i]));
  }
}

TEST(Windows, Counting) {
  std::vector<double> v(13);
  std::iota(v.begin(), v.end(), 0.0);
  EXPECT_EQ(make_windows(std::span(v).first(12), 8, 4).size(), 1u);
  const auto ds = make_windows(v, 8, 4);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.input(1)[0], 1.0);
  EXPECT_EQ(ds.target(1)[0], 9.0);
  EXPECT_EQ(ds.target(1)[3], 12.0);
  EXPECT_EQ(make_windows(std::span(v).first(11), 8, 4).size(), 0u);
  EXPECT_THROW(make_windows(v, 0, 4), ConfigError);
}

TEST(Windows, ConservationAndStride) {
  for (std::size_t len : {0u, 1u, 11u, 12u, 50u, 97u}) {
    for (std::size_t L : {1u, 3u, 8u}) {
      for (std::size_t H : {1u, 4u}) {
        std::vector<double> v(len);
        std::iota(v.begin(), v.end(), 0.0);
        const auto ds = make_windows(v, L, H);
        const long expect = std::max<long>(0, static_cast<long>(len) - static_cast<long>(L + H) + 1);
        EXPECT_EQ(static_cast<long>(ds.size()), expect);
        for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(ds.input(i)[0], static_cast<double>(i));
      }
    }
  }
}

TEST(Split, Examples) {
  std::vector<double> v(111);
  std::iota(v.begin(), v.end(), 0.0);
  auto ds = make_windows(v, 8, 4);
  ASSERT_EQ(ds.size(), 100u);
  auto s = train_test_split(ds, 0.75);
  EXPECT_EQ(s.train.size(), 75u);
  EXPECT_EQ(s.test.size(), 25u);
  EXPECT_TRUE(s.warning.empty());
  EXPECT_LT(s.train.input(s.train.size() - 1)[0], s.test.input(0)[0]);
  EXPECT_EQ(s.test.first_offset, 75u);

  auto four = make_windows(std::span(v).first(15), 8, 4);
  ASSERT_EQ(four.size(), 4u);
  auto s4 = train_test_split(four, 0.75);
  EXPECT_EQ(s4.train.size(), 3u);
  EXPECT_EQ(s4.test.size(), 1u);

  auto one = make_windows(std::span(v).first(12), 8, 4);
  auto s1 = train_test_split(one, 0.75);
  EXPECT_EQ(s1.train.size(), 0u);
  EXPECT_EQ(s1.test.size(), 1u);
  EXPECT_FALSE(s1.warning.empty());

  EXPECT_THROW(train_test_split(ds, 1.0), ConfigError);
  EXPECT_THROW(train_test_split(ds, 0.0), ConfigError);
}

TEST(Split, ChronologyOfWindowStarts) {
  std::vector<double> v(400);
  std::iota(v.begin(), v.end(), 0.0);
  auto s = train_test_split(make_windows(v, 8, 4), 0.75);
  const std::size_t last_train_start = s.train.first_offset + s.train.size() - 1;
  EXPECT_LT(last_train_start, s.test.first_offset);
  // Targets of the training set never reach past the first test target.
  EXPECT_LE(s.train.target(s.train.size() - 1).back(), s.test.target(0).back());
}

TEST(PrepareClient, NormalizesOverWholeSeries) {
  auto s = testing_support::ramp(200, 2.0, 1.0);
  const auto split = prepare_client(s, 8, 4, 0.75);
  EXPECT_EQ(split.train.norm, split.test.norm);
  EXPECT_EQ(split.train.norm.min_kwh, 2.0);
  EXPECT_EQ(split.train.norm.max_kwh, 201.0);
  EXPECT_DOUBLE_EQ(split.test.target(split.test.size() - 1).back(), 1.0);
}

TEST(Summary, Examples) {
  std::vector<double> v(273 * 96, 2.0);
  const auto s = consumption_summary(make_series(v), 273);
  ASSERT_EQ(s.daily_means.size(), 273u);
  for (double d : s.daily_means) EXPECT_EQ(d, 2.0);

  std::vector<double> two(96, 1.0);
  two.resize(192, 3.0);
  EXPECT_EQ(consumption_summary(make_series(two), 2).daily_means, (std::vector<double>{1.0, 3.0}));

  std::vector<double> short_v(272 * 96, 1.0);
  try {
    consumption_summary(make_series(short_v), 273);
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("272"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("273"), std::string::npos);
  }
}

TEST(Summary, MeanConsistency) {
  Rng rng(5);
  std::vector<double> v(10 * 96 + 17);
  for (auto& x : v) x = rng.uniform(0.0, 9.0);
  const auto s = consumption_summary(make_series(v), 10);
  const double mean_days = std::accumulate(s.daily_means.begin(), s.daily_means.end(), 0.0) / 10.0;
  const double mean_raw = std::accumulate(v.begin(), v.begin() + 960, 0.0) / 960.0;
  EXPECT_NEAR(mean_days, mean_raw, 1e-9);
}

TEST(Synth, NoiseFreeConstant) {
  SynthConfig cfg;
  cfg.days = 2;
  SynthClass k;
  k.base_kwh = 5.0;
  cfg.classes = {k};
  const auto pop = synth_population(cfg, 1);
  ASSERT_EQ(pop.size(), 1u);
  for (double v : pop[0].series.values) EXPECT_EQ(v, 5.0);
}

TEST(Synth, DeterministicAndShaped) {
  auto cfg = testing_support::two_class_config(30, 6, 0, 9);
  const auto a = synth_population(cfg, 9);
  const auto b = synth_population(cfg, 9);
  ASSERT_EQ(a.size(), 12u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].series.values, b[i].series.values);
    EXPECT_EQ(a[i].series.values.size(), 2880u);
    for (double v : a[i].series.values) EXPECT_GE(v, 0.0);
  }
  const auto c = synth_population(cfg, 10);
  EXPECT_NE(a[0].series.values, c[0].series.values);
  // Members of a class differ.
  EXPECT_NE(a[0].series.values, a[1].series.values);
}

TEST(Synth, ClassesSeparateInSummaries) {
  SynthConfig cfg;
  cfg.days = 14;
  SynthClass lo;
  lo.base_kwh = 2;
  lo.amplitude = 1;
  lo.noise_sigma = 0.2;
  lo.n_clients = 5;
  lo.scale_jitter = 0.1;
  SynthClass hi = lo;
  hi.base_kwh = 40;
  hi.amplitude = 10;
  cfg.classes = {lo, hi};
  double mean[2] = {0, 0};
  std::vector<SummaryVector> sums;
  std::vector<int> truth;
  for (const auto& b : synth_population(cfg, 4)) {
    auto s = consumption_summary(b.series, 14);
    mean[b.class_index] += std::accumulate(s.daily_means.begin(), s.daily_means.end(), 0.0) / 14.0 / 5.0;
    sums.push_back(s);
    truth.push_back(static_cast<int>(b.class_index));
  }
  EXPECT_GE(mean[1] - mean[0], 30.0);
  const auto model = kmeans_fit(sums, 2, {});
  for (std::size_t i = 0; i < sums.size(); ++i) {
    EXPECT_EQ(model.assignments.at(sums[i].building_id) == model.assignments.at(sums[0].building_id),
              truth[i] == truth[0]);
  }
}

TEST(Synth, ConfigValidation) {
  auto cfg = testing_support::two_class_config(3, 1, 0, 1);
  cfg.classes[0].n_clients = 0;
  EXPECT_THROW(synth_population(cfg, 1), ConfigError);
  cfg = testing_support::two_class_config(3, 1, 0, 1);
  cfg.classes[1].base_kwh = 0;
  EXPECT_THROW(synth_population(cfg, 1), ConfigError);
  EXPECT_THROW(synth_config_from_json(json{{"classes", json::array()}, {"bogus", 1}}), ConfigError);
  const auto rt = synth_config_from_json(to_json(testing_support::two_class_config(3, 2, 1, 8)));
  EXPECT_EQ(rt.classes.size(), 2u);
  EXPECT_EQ(rt.classes[1].n_holdout, 1u);
  EXPECT_EQ(rt.seed, 8u);
}

TEST(Manifest, RoundTripAndRoles) {
  TempDir dir;
  Manifest m;
  m.entries.push_back({"a", "a.csv", "CA", Role::train});
  m.entries.push_back({"b", "sub/b.csv", "NY", Role::test});
  write_manifest(m, dir / "m.json");
  const auto back = read_manifest(dir / "m.json");
  ASSERT_EQ(back.entries.size(), 2u);
  EXPECT_EQ(back.entries[1].role, Role::test);
  EXPECT_EQ(back.entries[1].state, "NY");
  EXPECT_EQ(back.resolve(back.entries[1]), dir.path() / "sub/b.csv");
  write_file(dir / "bad.json", R"({"buildings": [{"file": "x.csv", "colour": 1}]})");
  EXPECT_THROW(read_manifest(dir / "bad.json"), ConfigError);
}
