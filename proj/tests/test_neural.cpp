#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles/oracles.hpp"
#include "support.hpp"

using namespace fedload;

namespace {

ModelArch small_arch(CellType cell, std::size_t hidden = 8) {
  ModelArch a;
  a.cell = cell;
  a.hidden_dim = hidden;
  return a;
}

// Random params with every tensor (biases included) drawn from U(-0.5, 0.5).
Params<double> random_params(const ModelArch& arch, std::uint64_t seed) {
  Params<double> p = Params<double>::zeros(arch);
  Rng rng(seed);
  for (auto& t : p.tensors())
    for (auto& v : t.values) v = rng.uniform(-0.5, 0.5);
  return p;
}

std::vector<double> random_vec(std::size_t n, Rng& rng, double lo = 0.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

WindowedDataset random_dataset(const ModelArch& arch, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  WindowedDataset ds;
  ds.building_id = "r";
  ds.lookback = arch.lookback;
  ds.horizon = arch.horizon;
  ds.inputs = random_vec(n * arch.lookback, rng);
  ds.targets = random_vec(n * arch.horizon, rng);
  return ds;
}

}  // namespace

TEST(Losses, Examples) {
  const std::vector<double> y1{1, 0, 0, 0}, z4(4, 0.0), y2{2, 2}, p2{0, 4}, ones(4, 1.0);
  EXPECT_EQ(mse(y1, z4), 0.25);
  EXPECT_EQ(mse(y2, p2), 4.0);
  EXPECT_EQ(mse(y1, y1), 0.0);
  EXPECT_EQ(ew_mse(ones, z4, 2.0), 3.75);
  EXPECT_EQ(ew_mse(y1, y1, 3.0), 0.0);
  EXPECT_THROW(ew_mse(ones, z4, 0.5), ConfigError);
  EXPECT_THROW(mse(y1, y2), DataError);
}

TEST(Losses, EwMseDominatesMse) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto y = random_vec(4, rng), p = random_vec(4, rng);
    const double beta = rng.uniform(1.0, 4.0);
    EXPECT_GE(ew_mse(y, p, beta), mse(y, p));
    EXPECT_NEAR(ew_mse(y, p, beta), oracle::ew_mse(y, p, beta), 1e-14);
  }
  // Equality when all the error sits on the first step.
  const std::vector<double> y{1, 0, 0, 0}, p(4, 0.0);
  EXPECT_EQ(ew_mse(y, p, 3.0), mse(y, p));
}

TEST(Init, ShapesCountAndDeterminism) {
  const auto arch = small_arch(CellType::lstm);
  const auto p = init_params<float>(arch, 5);
  EXPECT_EQ(p.parameter_count(), 320u + 9u * 4u);
  EXPECT_EQ(p, init_params<float>(arch, 5));
  EXPECT_FALSE(p == init_params<float>(arch, 6));
  for (float v : p.at("b_f").values) EXPECT_EQ(v, 1.0f);
  for (float v : p.at("b_i").values) EXPECT_EQ(v, 0.0f);
  const float bound = 1.0f / std::sqrt(8.0f);
  for (float v : p.at("W_g").values) EXPECT_LE(std::abs(v), bound);
  const auto g = init_params<float>(small_arch(CellType::gru), 5);
  EXPECT_EQ(g.parameter_count(), 3u * (8u * 9u + 8u) + 9u * 4u);
  std::vector<std::string> names;
  for (const auto& t : p.tensors()) names.push_back(t.name);
  EXPECT_TRUE(std::is_sorted(names.begin(), names.end()));
}

TEST(Forward, ZeroWeights) {
  const std::vector<double> x{0.3, 0.9, 0.1, 0.5, 0.2, 0.8, 0.4, 0.7};
  for (CellType cell : {CellType::lstm, CellType::gru}) {
    const auto arch = small_arch(cell);
    const auto r = forward(Params<double>::zeros(arch), arch, x);
    for (double v : r.prediction) EXPECT_EQ(v, 0.0);
    for (double v : r.tape.h) EXPECT_EQ(v, 0.0);
  }
  const auto gru = forward(Params<double>::zeros(small_arch(CellType::gru)), small_arch(CellType::gru), x);
  for (double z : gru.tape.gate[0]) EXPECT_EQ(z, 0.5);
  for (double r : gru.tape.gate[1]) EXPECT_EQ(r, 0.5);
}

TEST(Forward, LstmDecayFromUnitCell) {
  const auto arch = small_arch(CellType::lstm, 3);
  CellState init{std::vector<double>(3, 0.0), std::vector<double>(3, 1.0)};
  const std::vector<double> x(8, 0.4);
  const auto r = forward(Params<double>::zeros(arch), arch, x, &init);
  for (std::size_t t = 1; t <= 8; ++t) {
    const double c = std::pow(0.5, static_cast<double>(t));
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_NEAR(r.tape.c[t * 3 + k], c, 1e-15);
      EXPECT_NEAR(r.tape.h[t * 3 + k], 0.5 * std::tanh(c), 1e-15);
    }
  }
}

TEST(Forward, MatchesOracleAndBoundsHidden) {
  for (CellType cell : {CellType::lstm, CellType::gru}) {
    const auto arch = small_arch(cell);
    Rng rng(3);
    for (std::uint64_t s = 0; s < 5; ++s) {
      auto p = random_params(arch, s);
      const auto x = random_vec(arch.lookback, rng, -2.0, 2.0);
      const auto r = forward(p, arch, x);
      const auto o = oracle::forward(p, arch, x);
      for (std::size_t i = 0; i < arch.horizon; ++i) EXPECT_NEAR(r.prediction[i], o[i], 1e-13);
      for (double h : r.tape.h) EXPECT_LT(std::abs(h), 1.0);
    }
  }
}

TEST(Forward, NumericFaultCarriesStep) {
  const auto arch = small_arch(CellType::lstm);
  auto p = Params<double>::zeros(arch);
  std::vector<double> x(8, 0.5);
  x[2] = std::numeric_limits<double>::quiet_NaN();
  try {
    forward(p, arch, x);
    FAIL() << "expected a numeric fault";
  } catch (const NumericFault& e) {
    EXPECT_EQ(e.step(), 3u);
    EXPECT_EQ(e.exit_code(), 3);
  }
  auto q = Params<double>::zeros(arch);
  q.at("b_out").values[1] = std::numeric_limits<double>::infinity();
  try {
    forward(q, arch, std::vector<double>(8, 0.5));
    FAIL() << "expected a numeric fault";
  } catch (const NumericFault& e) {
    EXPECT_EQ(e.step(), 9u);
  }
  EXPECT_THROW(forward(p, arch, std::vector<double>(7, 0.5)), DataError);
}

TEST(Backward, MatchesFiniteDifferences) {
  for (CellType cell : {CellType::lstm, CellType::gru}) {
    const auto arch = small_arch(cell);
    for (double beta : {1.0, 2.0, 3.0}) {
      const auto p = random_params(arch, 40 + static_cast<std::uint64_t>(beta));
      Rng rng(7);
      const auto x = random_vec(arch.lookback, rng);
      const auto y = random_vec(arch.horizon, rng);
      const auto r = forward(p, arch, x);
      const auto g = backward(p, r.tape, y, LossSpec::ew_mse(beta)).flatten();
      const auto fd = oracle::fd_gradient(p, arch, x, y, beta);
      EXPECT_LT(oracle::max_relative_error(g, fd), 1e-4) << to_string(cell) << " beta " << beta;
    }
  }
}

TEST(Backward, ZeroResidualAndHeadBiasClosedForm) {
  const auto arch = small_arch(CellType::gru);
  const auto p = random_params(arch, 8);
  const std::vector<double> x(8, 0.25);
  const auto r = forward(p, arch, x);
  const auto zero = backward(p, r.tape, r.prediction, LossSpec::ew_mse(2.0));
  for (double v : zero.flatten()) EXPECT_EQ(v, 0.0);

  const std::vector<double> y{0.1, 0.2, 0.3, 0.4};
  const auto g = backward(p, r.tape, y, LossSpec::ew_mse(2.0));
  for (std::size_t i = 0; i < 4; ++i) {
    const double expect = 2.0 / 4.0 * std::pow(2.0, static_cast<double>(i)) * (r.prediction[i] - y[i]);
    EXPECT_NEAR(g.at("b_out").values[i], expect, 1e-15);
  }
}

TEST(Sgd, Examples) {
  const auto arch = small_arch(CellType::lstm, 2);
  auto p = random_params(arch, 1);
  const auto before = p;
  sgd_step(p, Gradient::zeros(arch), 0.1);
  EXPECT_EQ(p, before);
  sgd_step(p, p, 1.0);
  for (double v : p.flatten()) EXPECT_EQ(v, 0.0);

  auto a = before, b = before;
  auto g1 = random_params(arch, 2), g2 = random_params(arch, 3);
  sgd_step(a, g1, 0.1);
  sgd_step(a, g2, 0.1);
  auto sum = g1;
  auto& st = sum.tensors();
  for (std::size_t t = 0; t < st.size(); ++t)
    for (std::size_t k = 0; k < st[t].values.size(); ++k) st[t].values[k] += g2.tensors()[t].values[k];
  sgd_step(b, sum, 0.1);
  const auto fa = a.flatten(), fb = b.flatten();
  for (std::size_t i = 0; i < fa.size(); ++i) EXPECT_NEAR(fa[i], fb[i], 1e-15);
}

TEST(TrainLocal, FullBatchSingleStep) {
  const auto arch = small_arch(CellType::lstm);
  const auto ds = random_dataset(arch, 12, 4);
  const auto w0 = random_params(arch, 9);
  LocalTrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 12;
  cfg.epochs = 1;
  cfg.loss = LossSpec::ew_mse(2.0);
  const auto w1 = train_local(w0, arch, ds, cfg);

  const auto fd = oracle::fd_gradient(w0, arch, ds.inputs, ds.targets, 2.0);
  const auto f0 = w0.flatten(), f1 = w1.flatten();
  for (std::size_t i = 0; i < f0.size(); ++i) EXPECT_NEAR(f1[i], f0[i] - 0.05 * fd[i], 1e-10);
}

TEST(TrainLocal, ZeroEpochsAndDeterminism) {
  const auto arch = small_arch(CellType::gru);
  const auto ds = random_dataset(arch, 50, 5);
  const auto w0 = init_params<float>(arch, 3);
  LocalTrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_EQ(train_local(w0, arch, ds, cfg), w0);
  cfg.epochs = 2;
  cfg.batch_size = 7;
  cfg.seed = 21;
  LocalTrainStats st;
  const auto a = train_local(w0, arch, ds, cfg, &st);
  EXPECT_EQ(a, train_local(w0, arch, ds, cfg));
  EXPECT_EQ(st.steps, 2u * 8u);
  EXPECT_EQ(st.samples, 100u);
  cfg.seed = 22;
  EXPECT_FALSE(a == train_local(w0, arch, ds, cfg));
}

TEST(TrainLocal, OneEpochReducesLoss) {
  for (CellType cell : {CellType::lstm, CellType::gru}) {
    const auto arch = small_arch(cell);
    const auto ds = random_dataset(arch, 20, 6);
    const auto w0 = init_params<double>(arch, 4);
    LocalTrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 20;
    cfg.epochs = 1;
    const auto w1 = train_local(w0, arch, ds, cfg);
    EXPECT_LT(dataset_loss(w1, arch, ds, cfg.loss), dataset_loss(w0, arch, ds, cfg.loss));
  }
}

TEST(TrainLocal, BetaOneIsBitIdenticalToMse) {
  const auto arch = small_arch(CellType::lstm);
  const auto ds = random_dataset(arch, 40, 8);
  const auto w0 = init_params<float>(arch, 1);
  LocalTrainConfig a;
  a.batch_size = 8;
  a.seed = 5;
  a.loss = LossSpec::ew_mse(1.0);
  LocalTrainConfig b = a;
  b.loss = LossSpec::mse();
  const auto wa = train_local(w0, arch, ds, a);
  const auto wb = train_local(w0, arch, ds, b);
  EXPECT_EQ(wa, wb);
}

TEST(TrainLocal, Errors) {
  const auto arch = small_arch(CellType::lstm);
  WindowedDataset empty;
  empty.lookback = 8;
  empty.horizon = 4;
  EXPECT_THROW(train_local(init_params<float>(arch, 1), arch, empty, {}), DataError);
  LocalTrainConfig bad;
  bad.batch_size = 0;
  EXPECT_THROW(train_local(init_params<float>(arch, 1), arch, random_dataset(arch, 3, 1), bad),
               ConfigError);
}
