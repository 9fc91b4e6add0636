#pragma once

// Recurrent forecaster: single-layer LSTM or GRU over a univariate lookback
// window, followed by a linear head emitting every horizon step at once.
// Forward pass, exact BPTT for the (exponentially weighted) MSE loss, plain
// SGD and the local minibatch training loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedload/data.hpp"
#include "fedload/error.hpp"
#include "fedload/params.hpp"
#include "fedload/rng.hpp"

namespace fedload {

// ---------------------------------------------------------------------------
// Losses

enum class LossKind : std::uint8_t { mse = 0, ew_mse = 1 };

struct LossSpec {
  LossKind kind = LossKind::ew_mse;
  double beta = 2.0;

  static LossSpec mse() { return {LossKind::mse, 1.0}; }
  static LossSpec ew_mse(double beta) { return {LossKind::ew_mse, beta}; }

  void validate() const {
    if (kind == LossKind::ew_mse && !(beta >= 1.0)) {
      throw ConfigError("ew_mse: beta must be >= 1");
    }
  }

  // Per-step weight; horizon step i (0-based) gets beta^i.
  std::vector<double> horizon_weights(std::size_t horizon) const {
    std::vector<double> w(horizon, 1.0);
    if (kind == LossKind::ew_mse) {
      for (std::size_t i = 0; i < horizon; ++i) w[i] = std::pow(beta, static_cast<double>(i));
    }
    return w;
  }
};

namespace detail {

inline double weighted_mse(std::span<const double> y, std::span<const double> y_hat,
                           std::span<const double> weights) {
  if (y.size() != y_hat.size()) {
    throw DataError("loss: length mismatch (" + std::to_string(y.size()) + " vs " +
                    std::to_string(y_hat.size()) + ")");
  }
  if (y.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = y[i] - y_hat[i];
    s += weights[i] * e * e;
  }
  return s / static_cast<double>(y.size());
}

}  // namespace detail

inline double mse(std::span<const double> y, std::span<const double> y_hat) {
  const std::vector<double> w(y.size(), 1.0);
  return detail::weighted_mse(y, y_hat, w);
}

inline double ew_mse(std::span<const double> y, std::span<const double> y_hat,
                     double beta) {
  LossSpec::ew_mse(beta).validate();
  return detail::weighted_mse(y, y_hat, LossSpec::ew_mse(beta).horizon_weights(y.size()));
}

inline double loss_value(const LossSpec& loss, std::span<const double> y,
                         std::span<const double> y_hat) {
  return loss.kind == LossKind::mse ? mse(y, y_hat) : ew_mse(y, y_hat, loss.beta);
}

// ---------------------------------------------------------------------------
// Initialization

// Weights uniform in [-1/sqrt(hidden), 1/sqrt(hidden)], biases zero, LSTM
// forget bias 1. Tensors are drawn in canonical order from one stream.
template <typename T = float>
Params<T> init_params(const ModelArch& arch, std::uint64_t seed) {
  Params<T> p = Params<T>::zeros(arch);
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(arch.hidden_dim));
  for (auto& t : p.tensors()) {
    if (t.name[0] == 'W') {
      for (auto& v : t.values) v = static_cast<T>(rng.uniform(-bound, bound));
    } else if (arch.cell == CellType::lstm && t.name == "b_f") {
      std::fill(t.values.begin(), t.values.end(), T{1});
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward pass

struct CellState {
  std::vector<double> h;
  std::vector<double> c;  // LSTM only
};

// Activations cached by a forward pass. Per-step vectors are stored
// step-major with `hidden` entries per step; h and c hold L + 1 states
// (index 0 is the initial state). Gate slots: LSTM f, i, g, o; GRU z, r,
// candidate.
struct Tape {
  ModelArch arch;
  std::vector<double> x;
  std::vector<double> h;
  std::vector<double> c;
  std::vector<double> gate[4];
  std::vector<double> prediction;
};

struct ForwardResult {
  std::vector<double> prediction;
  Tape tape;
};

namespace detail {

inline double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

// out = b + W [h; x] for a rows x (hidden + 1) matrix.
inline void gate_preact(const double* W, const double* b, std::size_t rows,
                        const double* h, std::size_t hidden, double x,
                        double* out) {
  const std::size_t cols = hidden + 1;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* w = W + r * cols;
    double s = b[r];
    for (std::size_t j = 0; j < hidden; ++j) s += w[j] * h[j];
    s += w[hidden] * x;
    out[r] = s;
  }
}

// Resolved tensor pointers in gate-slot order.
template <typename P>
struct CellPtrs {
  P W[4]{};
  P b[4]{};
  P W_out{};
  P b_out{};
};

template <typename ParamsT>
auto resolve(ParamsT& p, const ModelArch& arch) {
  using Ptr = decltype(p.at("W_out").values.data());
  CellPtrs<Ptr> ptrs;
  const auto names = gate_names(arch.cell);
  for (std::size_t g = 0; g < names.size(); ++g) {
    ptrs.W[g] = p.at("W_" + names[g]).values.data();
    ptrs.b[g] = p.at("b_" + names[g]).values.data();
  }
  ptrs.W_out = p.at("W_out").values.data();
  ptrs.b_out = p.at("b_out").values.data();
  return ptrs;
}

inline void check_finite(std::span<const double> v, std::size_t step,
                         const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericFault(step, what);
  }
}

}  // namespace detail

// Runs the cell over `input` (length lookback) from `initial` (zeros when
// null) and writes every activation into `tape`, reusing its buffers.
inline void forward_into(const Params<double>& params, const ModelArch& arch,
                         std::span<const double> input, Tape& tape,
                         const CellState* initial = nullptr) {
  const std::size_t L = arch.lookback;
  const std::size_t H = arch.hidden_dim;
  if (input.size() != L) {
    throw DataError("forward: input length " + std::to_string(input.size()) +
                    " != lookback " + std::to_string(L));
  }
  const auto w = detail::resolve(params, arch);
  const bool lstm = arch.cell == CellType::lstm;

  tape.arch = arch;
  tape.x.assign(input.begin(), input.end());
  tape.h.assign((L + 1) * H, 0.0);
  tape.c.assign(lstm ? (L + 1) * H : 0, 0.0);
  for (std::size_t g = 0; g < 4; ++g) {
    tape.gate[g].assign(g < arch.gate_count() ? L * H : 0, 0.0);
  }
  if (initial) {
    if (initial->h.size() == H) std::copy(initial->h.begin(), initial->h.end(), tape.h.begin());
    if (lstm && initial->c.size() == H) {
      std::copy(initial->c.begin(), initial->c.end(), tape.c.begin());
    }
  }

  std::vector<double> rh(H);
  for (std::size_t t = 0; t < L; ++t) {
    const double* h_prev = tape.h.data() + t * H;
    double* h_next = tape.h.data() + (t + 1) * H;
    const double x = tape.x[t];
    if (lstm) {
      double* f = tape.gate[0].data() + t * H;
      double* i = tape.gate[1].data() + t * H;
      double* g = tape.gate[2].data() + t * H;
      double* o = tape.gate[3].data() + t * H;
      detail::gate_preact(w.W[0], w.b[0], H, h_prev, H, x, f);
      detail::gate_preact(w.W[1], w.b[1], H, h_prev, H, x, i);
      detail::gate_preact(w.W[2], w.b[2], H, h_prev, H, x, g);
      detail::gate_preact(w.W[3], w.b[3], H, h_prev, H, x, o);
      const double* c_prev = tape.c.data() + t * H;
      double* c_next = tape.c.data() + (t + 1) * H;
      for (std::size_t k = 0; k < H; ++k) {
        f[k] = detail::sigmoid(f[k]);
        i[k] = detail::sigmoid(i[k]);
        g[k] = std::tanh(g[k]);
        o[k] = detail::sigmoid(o[k]);
        c_next[k] = f[k] * c_prev[k] + i[k] * g[k];
        h_next[k] = o[k] * std::tanh(c_next[k]);
      }
      detail::check_finite({c_next, H}, t + 1, "non-finite cell state");
    } else {
      double* z = tape.gate[0].data() + t * H;
      double* r = tape.gate[1].data() + t * H;
      double* cand = tape.gate[2].data() + t * H;
      detail::gate_preact(w.W[0], w.b[0], H, h_prev, H, x, z);
      detail::gate_preact(w.W[1], w.b[1], H, h_prev, H, x, r);
      for (std::size_t k = 0; k < H; ++k) {
        z[k] = detail::sigmoid(z[k]);
        r[k] = detail::sigmoid(r[k]);
        rh[k] = r[k] * h_prev[k];
      }
      detail::gate_preact(w.W[2], w.b[2], H, rh.data(), H, x, cand);
      for (std::size_t k = 0; k < H; ++k) {
        cand[k] = std::tanh(cand[k]);
        h_next[k] = z[k] * h_prev[k] + (1.0 - z[k]) * cand[k];
      }
    }
    detail::check_finite({h_next, H}, t + 1, "non-finite hidden state");
  }

  const std::size_t HZ = arch.horizon;
  const double* h_last = tape.h.data() + L * H;
  tape.prediction.assign(HZ, 0.0);
  for (std::size_t r = 0; r < HZ; ++r) {
    double s = w.b_out[r];
    const double* row = w.W_out + r * H;
    for (std::size_t k = 0; k < H; ++k) s += row[k] * h_last[k];
    tape.prediction[r] = s;
  }
  detail::check_finite(tape.prediction, L + 1, "non-finite prediction");
}

inline ForwardResult forward(const Params<double>& params, const ModelArch& arch,
                             std::span<const double> input,
                             const CellState* initial = nullptr) {
  ForwardResult out;
  forward_into(params, arch, input, out.tape, initial);
  out.prediction = out.tape.prediction;
  return out;
}

// Prediction only, for evaluation of exchanged (float) parameters.
inline std::vector<double> predict(const Params<double>& params,
                                   const ModelArch& arch,
                                   std::span<const double> input) {
  Tape tape;
  forward_into(params, arch, input, tape);
  return tape.prediction;
}

// ---------------------------------------------------------------------------
// Backward pass

// Adds scale * d(loss)/d(params) into `grad`, where loss is the weighted MSE
// of tape.prediction against `y`. Returns the loss value.
inline double backward_accumulate(const Params<double>& params, const Tape& tape,
                                  std::span<const double> y,
                                  std::span<const double> weights, double scale,
                                  Gradient& grad) {
  const ModelArch& arch = tape.arch;
  const std::size_t L = arch.lookback;
  const std::size_t H = arch.hidden_dim;
  const std::size_t HZ = arch.horizon;
  const std::size_t C = H + 1;
  if (y.size() != HZ || tape.prediction.size() != HZ || tape.x.size() != L ||
      tape.h.size() != (L + 1) * H) {
    throw DataError("backward: tape does not match target/arch shape");
  }
  if (!grad.same_shape(params)) throw DataError("backward: gradient shape mismatch");

  const auto w = detail::resolve(params, arch);
  auto dw = detail::resolve(grad, arch);

  // Output head.
  std::vector<double> dy(HZ);
  double loss = 0.0;
  for (std::size_t r = 0; r < HZ; ++r) {
    const double e = tape.prediction[r] - y[r];
    loss += weights[r] * e * e;
    dy[r] = 2.0 / static_cast<double>(HZ) * weights[r] * e;
  }
  loss /= static_cast<double>(HZ);

  std::vector<double> dh(H, 0.0);
  const double* h_last = tape.h.data() + L * H;
  for (std::size_t r = 0; r < HZ; ++r) {
    const double d = scale * dy[r];
    dw.b_out[r] += d;
    double* gw = dw.W_out + r * H;
    const double* row = w.W_out + r * H;
    for (std::size_t k = 0; k < H; ++k) {
      gw[k] += d * h_last[k];
      dh[k] += dy[r] * row[k];
    }
  }

  std::vector<double> dh_prev(H);
  if (arch.cell == CellType::lstm) {
    std::vector<double> dc(H, 0.0);
    std::vector<double> da[4] = {std::vector<double>(H), std::vector<double>(H),
                                 std::vector<double>(H), std::vector<double>(H)};
    for (std::size_t t = L; t-- > 0;) {
      const double* f = tape.gate[0].data() + t * H;
      const double* i = tape.gate[1].data() + t * H;
      const double* g = tape.gate[2].data() + t * H;
      const double* o = tape.gate[3].data() + t * H;
      const double* c_prev = tape.c.data() + t * H;
      const double* c_cur = tape.c.data() + (t + 1) * H;
      const double* h_prev = tape.h.data() + t * H;
      for (std::size_t k = 0; k < H; ++k) {
        const double tc = std::tanh(c_cur[k]);
        const double d_o = dh[k] * tc;
        dc[k] += dh[k] * o[k] * (1.0 - tc * tc);
        da[0][k] = dc[k] * c_prev[k] * f[k] * (1.0 - f[k]);
        da[1][k] = dc[k] * g[k] * i[k] * (1.0 - i[k]);
        da[2][k] = dc[k] * i[k] * (1.0 - g[k] * g[k]);
        da[3][k] = d_o * o[k] * (1.0 - o[k]);
        dc[k] *= f[k];  // carried to step t - 1
      }
      std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
      const double x = tape.x[t];
      for (std::size_t gi = 0; gi < 4; ++gi) {
        const double* W = w.W[gi];
        double* gW = dw.W[gi];
        double* gb = dw.b[gi];
        for (std::size_t r = 0; r < H; ++r) {
          const double a = da[gi][r];
          const double sa = scale * a;
          gb[r] += sa;
          double* grow = gW + r * C;
          const double* wrow = W + r * C;
          for (std::size_t j = 0; j < H; ++j) {
            grow[j] += sa * h_prev[j];
            dh_prev[j] += a * wrow[j];
          }
          grow[H] += sa * x;
        }
      }
      dh.swap(dh_prev);
    }
  } else {
    std::vector<double> da_z(H), da_r(H), da_c(H), drh(H), rh(H);
    for (std::size_t t = L; t-- > 0;) {
      const double* z = tape.gate[0].data() + t * H;
      const double* r = tape.gate[1].data() + t * H;
      const double* cand = tape.gate[2].data() + t * H;
      const double* h_prev = tape.h.data() + t * H;
      const double x = tape.x[t];
      for (std::size_t k = 0; k < H; ++k) {
        da_z[k] = dh[k] * (h_prev[k] - cand[k]) * z[k] * (1.0 - z[k]);
        da_c[k] = dh[k] * (1.0 - z[k]) * (1.0 - cand[k] * cand[k]);
        dh_prev[k] = dh[k] * z[k];
        rh[k] = r[k] * h_prev[k];
        drh[k] = 0.0;
      }
      // Candidate: tanh(W_h [r * h_prev; x] + b_h).
      for (std::size_t row = 0; row < H; ++row) {
        const double a = da_c[row];
        const double sa = scale * a;
        dw.b[2][row] += sa;
        double* grow = dw.W[2] + row * C;
        const double* wrow = w.W[2] + row * C;
        for (std::size_t j = 0; j < H; ++j) {
          grow[j] += sa * rh[j];
          drh[j] += a * wrow[j];
        }
        grow[H] += sa * x;
      }
      for (std::size_t k = 0; k < H; ++k) {
        da_r[k] = drh[k] * h_prev[k] * r[k] * (1.0 - r[k]);
        dh_prev[k] += drh[k] * r[k];
      }
      const std::vector<double>* da[2] = {&da_z, &da_r};
      for (std::size_t gi = 0; gi < 2; ++gi) {
        for (std::size_t row = 0; row < H; ++row) {
          const double a = (*da[gi])[row];
          const double sa = scale * a;
          dw.b[gi][row] += sa;
          double* grow = dw.W[gi] + row * C;
          const double* wrow = w.W[gi] + row * C;
          for (std::size_t j = 0; j < H; ++j) {
            grow[j] += sa * h_prev[j];
            dh_prev[j] += a * wrow[j];
          }
          grow[H] += sa * x;
        }
      }
      dh.swap(dh_prev);
    }
  }
  return loss;
}

// Exact gradient of the loss with respect to every parameter tensor.
inline Gradient backward(const Params<double>& params, const Tape& tape,
                         std::span<const double> y, const LossSpec& loss) {
  loss.validate();
  Gradient grad = Gradient::zeros(tape.arch);
  const auto weights = loss.horizon_weights(tape.arch.horizon);
  backward_accumulate(params, tape, y, weights, 1.0, grad);
  return grad;
}

// ---------------------------------------------------------------------------
// Optimization

inline void sgd_step(Params<double>& params, const Gradient& grad,
                     double learning_rate) {
  if (!params.same_shape(grad)) throw DataError("sgd_step: shape mismatch");
  auto& pt = params.tensors();
  const auto& gt = grad.tensors();
  for (std::size_t i = 0; i < pt.size(); ++i) {
    auto& p = pt[i].values;
    const auto& g = gt[i].values;
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= learning_rate * g[k];
  }
}

struct LocalTrainConfig {
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  std::size_t epochs = 2;
  LossSpec loss;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    loss.validate();
  }
};

struct LocalTrainStats {
  double mean_loss = 0.0;  // mean per-sample loss over the final epoch
  std::size_t steps = 0;
  std::size_t samples = 0;
};

// ClientUpdate: `epochs` passes of minibatch SGD. Samples are chunked
// sequentially into batches of `batch_size` (the last may be short); the
// batch visiting order is reshuffled every epoch. Works on a double copy
// and returns in the caller's precision.
template <typename T>
Params<T> train_local(const Params<T>& params, const ModelArch& arch,
                      const WindowedDataset& train, const LocalTrainConfig& cfg,
                      LocalTrainStats* stats = nullptr) {
  cfg.validate();
  if (train.empty()) {
    throw DataError("train_local: empty train set for '" + train.building_id + "'");
  }
  if (train.lookback != arch.lookback || train.horizon != arch.horizon) {
    throw DataError("train_local: dataset windows do not match arch");
  }
  Params<double> w = params.template cast<double>();
  const std::size_t n = train.size();
  const std::size_t n_batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  std::vector<std::size_t> order(n_batches);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto weights = cfg.loss.horizon_weights(arch.horizon);

  Rng rng(cfg.seed);
  Gradient grad = Gradient::zeros(arch);
  Tape tape;
  LocalTrainStats st;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t b : order) {
      const std::size_t begin = b * cfg.batch_size;
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(end - begin);
      for (auto& t : grad.tensors()) std::fill(t.values.begin(), t.values.end(), 0.0);
      for (std::size_t s = begin; s < end; ++s) {
        forward_into(w, arch, train.input(s), tape);
        epoch_loss += backward_accumulate(w, tape, train.target(s), weights, scale, grad);
      }
      sgd_step(w, grad, cfg.learning_rate);
      ++st.steps;
    }
    st.mean_loss = epoch_loss / static_cast<double>(n);
    st.samples += n;
  }
  if (stats) *stats = st;
  return w.template cast<T>();
}

// Mean per-sample loss of `params` over a dataset.
template <typename T>
double dataset_loss(const Params<T>& params, const ModelArch& arch,
                    const WindowedDataset& ds, const LossSpec& loss) {
  if (ds.empty()) return 0.0;
  const Params<double> w = params.template cast<double>();
  Tape tape;
  double s = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    forward_into(w, arch, ds.input(i), tape);
    s += loss_value(loss, ds.target(i), tape.prediction);
  }
  return s / static_cast<double>(ds.size());
}

}  // namespace fedload
