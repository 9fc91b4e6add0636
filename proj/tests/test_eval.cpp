#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles/oracles.hpp"
#include "support.hpp"

using namespace fedload;

namespace {

WindowedDataset windows_of(const ConsumptionSeries& s, std::size_t L = 8, std::size_t H = 4) {
  auto [unit, norm] = minmax_normalize(s);
  auto ds = make_windows(unit, L, H);
  ds.building_id = s.building_id;
  ds.norm = norm;
  return ds;
}

}  // namespace

TEST(Metrics, RmseExamples) {
  const std::vector<double> a{1, 2, 3};
  EXPECT_EQ(rmse(a, a), 0.0);
  EXPECT_EQ(rmse(std::vector<double>{3}, std::vector<double>{0}), 3.0);
  EXPECT_DOUBLE_EQ(rmse(std::vector<double>{0, 0}, std::vector<double>{3, 4}), std::sqrt(12.5));
  EXPECT_THROW(rmse(a, std::vector<double>{1}), DataError);
  EXPECT_THROW(rmse(std::vector<double>{}, std::vector<double>{}), DataError);
}

TEST(Metrics, MapeExamples) {
  EXPECT_DOUBLE_EQ(mape(std::vector<double>{100, 100}, std::vector<double>{90, 110}, 0.01), 10.0);
  EXPECT_EQ(mape(std::vector<double>{5, 6}, std::vector<double>{5, 6}, 0.01), 0.0);
  EXPECT_DOUBLE_EQ(mape(std::vector<double>{0}, std::vector<double>{1}, 0.01), 10000.0);
  EXPECT_THROW(mape(std::vector<double>{1}, std::vector<double>{1, 2}, 0.01), DataError);
}

TEST(Metrics, PermutationScaleAndOracle) {
  Rng rng(2);
  std::vector<double> a(50), p(50);
  for (std::size_t i = 0; i < 50; ++i) {
    a[i] = rng.uniform(0.0, 10.0);
    p[i] = rng.uniform(0.0, 10.0);
  }
  EXPECT_NEAR(rmse(a, p), oracle::rmse(a, p), 1e-12);
  EXPECT_NEAR(mape(a, p, 0.01), oracle::mape(a, p, 0.01), 1e-10);
  std::vector<std::size_t> idx(50);
  std::iota(idx.begin(), idx.end(), 0u);
  rng.shuffle(idx.begin(), idx.end());
  std::vector<double> as, ps;
  for (auto i : idx) {
    as.push_back(a[i]);
    ps.push_back(p[i]);
  }
  EXPECT_NEAR(rmse(as, ps), rmse(a, p), 1e-12);
  EXPECT_NEAR(mape(as, ps, 0.01), mape(a, p, 0.01), 1e-10);
  std::vector<double> a3 = a, p3 = p;
  for (auto& v : a3) v *= 3.0;
  for (auto& v : p3) v *= 3.0;
  EXPECT_NEAR(rmse(a3, p3), 3.0 * rmse(a, p), 1e-12);
  EXPECT_NEAR(mape(a3, p3, 0.01), mape(a, p, 0.01), 1e-10);
}

TEST(Persistence, ConstantSeriesIsPerfect) {
  const auto ds = windows_of(testing_support::make_series(std::vector<double>(40, 2.5)));
  const auto r = persistence_baseline({ds}, 4);
  ASSERT_EQ(r.steps.size(), 4u);
  for (const auto& s : r.steps) {
    EXPECT_EQ(s.accuracy, 100.0);
    EXPECT_EQ(s.rmse, 0.0);
  }
}

TEST(Persistence, RampErrorGrowsLinearly) {
  const double slope = 0.25;
  const auto ds = windows_of(testing_support::ramp(60, 1.0, slope));
  const auto r = persistence_baseline({ds}, 4);
  for (std::size_t h = 1; h <= 4; ++h) {
    EXPECT_NEAR(r.step(h).rmse, static_cast<double>(h) * slope, 1e-12);
    EXPECT_EQ(r.step(h).minutes, static_cast<int>(15 * h));
  }
  EXPECT_THROW(persistence_baseline({ds}, 0), ConfigError);
}

TEST(Report, AccuracyComplementsMapeAndPoolingIsSampleWeighted) {
  ModelArch arch;
  arch.hidden_dim = 4;
  const auto params = init_params<float>(arch, 3);
  std::vector<WindowedDataset> clients;
  Rng rng(4);
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> v(30 + 25 * c);
    for (auto& x : v) x = rng.uniform(0.5, 4.0);
    auto s = testing_support::make_series(v, "c" + std::to_string(c));
    clients.push_back(windows_of(s));
  }
  const auto r = evaluate_model(params, arch, clients);
  EXPECT_EQ(r.n_clients, 3u);
  std::size_t n = 0;
  for (const auto& c : clients) n += c.size();
  EXPECT_EQ(r.n_samples, n);
  for (const auto& s : r.steps) {
    EXPECT_EQ(s.accuracy, 100.0 - s.mape);
    EXPECT_GE(s.rmse, 0.0);
  }
  EXPECT_EQ(r.aggregate.accuracy, 100.0 - r.aggregate.mape);
  for (std::size_t h = 0; h < 4; ++h) {
    double weighted = 0.0, mse_weighted = 0.0;
    for (const auto& c : r.clients) {
      weighted += c.mape[h] * static_cast<double>(c.n_samples);
      mse_weighted += c.mse[h] * static_cast<double>(c.n_samples);
    }
    EXPECT_NEAR(r.steps[h].mape, weighted / static_cast<double>(n), 1e-9);
    EXPECT_NEAR(r.steps[h].rmse, std::sqrt(mse_weighted / static_cast<double>(n)), 1e-9);
  }
}

TEST(Report, PredictionsAreDenormalized) {
  // A predictor returning the true normalized targets scores perfectly in kWh.
  ModelArch arch;
  arch.hidden_dim = 2;
  const auto ds = windows_of(testing_support::ramp(30, 10.0, 2.0));
  MetricAccumulator acc(4, 0.01);
  std::size_t i = 0;
  accumulate_clients(acc, {ds}, [&](std::span<const double>) {
    const auto t = ds.target(i++);
    return std::vector<double>(t.begin(), t.end());
  });
  const auto r = acc.finish("perfect");
  for (const auto& s : r.steps) {
    EXPECT_NEAR(s.accuracy, 100.0, 1e-12);
    EXPECT_NEAR(s.rmse, 0.0, 1e-12);
  }
}

TEST(Report, EmptyClientsSkippedWithWarning) {
  ModelArch arch;
  arch.hidden_dim = 2;
  WindowedDataset empty;
  empty.building_id = "nobody";
  empty.lookback = 8;
  empty.horizon = 4;
  const auto r = evaluate_model(init_params<float>(arch, 1), arch, {empty});
  EXPECT_EQ(r.n_samples, 0u);
  EXPECT_GE(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings.front().find("nobody"), std::string::npos);
}

TEST(Report, JsonAndCsvShape) {
  const auto ds = windows_of(testing_support::ramp(40));
  const auto r = persistence_baseline({ds}, 4, 0.01, "p");
  const json j = to_json(r);
  EXPECT_EQ(j["steps"].size(), 4u);
  EXPECT_EQ(j["steps"][3]["minutes"], 60);
  EXPECT_EQ(j["client_averaged"].size(), 4u);
  const std::string rows = to_csv_rows(r);
  EXPECT_EQ(std::count(rows.begin(), rows.end(), '\n'), 4);
  EXPECT_EQ(rows.rfind("p,4,60,", 0) == std::string::npos, true);
  EXPECT_NE(rows.find("p,4,60,"), std::string::npos);
  EXPECT_EQ(csv_header(), "population,step,minutes,rmse_kwh,mape_pct,accuracy_pct,n_samples\n");
}
