#pragma once

// Forecast metrics per horizon step (RMSE in kWh, MAPE and accuracy in %),
// pooled over every test sample of every client, and the persistence
// baseline.

#include <cmath>
#include <cstdio>
#include <algorithm>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fedload/data.hpp"
#include "fedload/error.hpp"
#include "fedload/json_util.hpp"
#include "fedload/log.hpp"
#include "fedload/neural.hpp"

namespace fedload {

inline constexpr double kDefaultMapeFloor = 0.01;  // kWh

inline double rmse(std::span<const double> actual, std::span<const double> predicted) {
  if (actual.size() != predicted.size()) throw DataError("rmse: length mismatch");
  if (actual.empty()) throw DataError("rmse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double e = actual[i] - predicted[i];
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(actual.size()));
}

inline double mape(std::span<const double> actual, std::span<const double> predicted,
                   double epsilon_floor = kDefaultMapeFloor) {
  if (actual.size() != predicted.size()) throw DataError("mape: length mismatch");
  if (actual.empty()) throw DataError("mape: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    s += std::abs(actual[i] - predicted[i]) / std::max(std::abs(actual[i]), epsilon_floor);
  }
  return 100.0 * s / static_cast<double>(actual.size());
}

struct HorizonMetrics {
  std::size_t step = 0;  // 1-based; 0 for the aggregate row
  int minutes = 0;
  double rmse = 0.0;
  double mape = 0.0;
  double accuracy = 0.0;  // 100 - mape
};

struct ClientMetrics {
  std::string building_id;
  std::size_t n_samples = 0;
  std::vector<double> mse;   // per step, kWh^2
  std::vector<double> mape;  // per step, %
};

struct EvalReport {
  std::string population;
  std::vector<HorizonMetrics> steps;
  HorizonMetrics aggregate;  // means over horizon steps
  // Per-client metrics averaged with equal client weight.
  std::vector<double> client_averaged_mape;
  std::size_t n_clients = 0;
  std::size_t n_samples = 0;
  std::vector<ClientMetrics> clients;
  std::vector<std::string> warnings;

  const HorizonMetrics& step(std::size_t one_based) const { return steps.at(one_based - 1); }
};

// Streams per-sample errors (in kWh) and finalizes an EvalReport.
class MetricAccumulator {
 public:
  MetricAccumulator(std::size_t horizon, double mape_floor)
      : horizon_(horizon), floor_(mape_floor),
        sq_(horizon, 0.0), pct_(horizon, 0.0) {}

  void begin_client(const std::string& id) {
    current_ = ClientMetrics{id, 0, std::vector<double>(horizon_, 0.0),
                             std::vector<double>(horizon_, 0.0)};
  }

  void add(std::span<const double> actual, std::span<const double> predicted) {
    for (std::size_t h = 0; h < horizon_; ++h) {
      const double e = actual[h] - predicted[h];
      const double pct = std::abs(e) / std::max(std::abs(actual[h]), floor_);
      sq_[h] += e * e;
      pct_[h] += pct;
      current_.mse[h] += e * e;
      current_.mape[h] += pct;
    }
    ++n_;
    ++current_.n_samples;
  }

  void end_client() {
    if (current_.n_samples == 0) return;
    const auto n = static_cast<double>(current_.n_samples);
    for (std::size_t h = 0; h < horizon_; ++h) {
      current_.mse[h] /= n;
      current_.mape[h] = 100.0 * current_.mape[h] / n;
    }
    clients_.push_back(std::move(current_));
  }

  void warn(std::string message) { warnings_.push_back(std::move(message)); }

  EvalReport finish(std::string population) const {
    EvalReport r;
    r.population = std::move(population);
    r.n_samples = n_;
    r.n_clients = clients_.size();
    r.clients = clients_;
    r.warnings = warnings_;
    if (n_ == 0) {
      r.warnings.push_back(r.population + ": no test samples");
      return r;
    }
    const auto n = static_cast<double>(n_);
    double sum_rmse = 0.0, sum_mape = 0.0;
    for (std::size_t h = 0; h < horizon_; ++h) {
      HorizonMetrics m;
      m.step = h + 1;
      m.minutes = static_cast<int>((h + 1) * kIntervalMinutes);
      m.rmse = std::sqrt(sq_[h] / n);
      m.mape = 100.0 * pct_[h] / n;
      m.accuracy = 100.0 - m.mape;
      sum_rmse += m.rmse;
      sum_mape += m.mape;
      r.steps.push_back(m);
    }
    r.aggregate.rmse = sum_rmse / static_cast<double>(horizon_);
    r.aggregate.mape = sum_mape / static_cast<double>(horizon_);
    r.aggregate.accuracy = 100.0 - r.aggregate.mape;
    r.aggregate.minutes = static_cast<int>(horizon_ * kIntervalMinutes);
    r.client_averaged_mape.assign(horizon_, 0.0);
    for (const auto& c : clients_) {
      for (std::size_t h = 0; h < horizon_; ++h) r.client_averaged_mape[h] += c.mape[h];
    }
    for (double& v : r.client_averaged_mape) v /= static_cast<double>(clients_.size());
    return r;
  }

 private:
  std::size_t horizon_;
  double floor_;
  std::vector<double> sq_;
  std::vector<double> pct_;
  std::size_t n_ = 0;
  ClientMetrics current_;
  std::vector<ClientMetrics> clients_;
  std::vector<std::string> warnings_;
};

// Predictor maps a normalized input window to normalized horizon outputs.
using WindowPredictor = std::function<std::vector<double>(std::span<const double>)>;

inline void accumulate_clients(MetricAccumulator& acc,
                               const std::vector<WindowedDataset>& clients,
                               const WindowPredictor& predictor) {
  std::vector<double> actual, predicted;
  for (const auto& ds : clients) {
    if (ds.empty()) {
      acc.warn(ds.building_id + ": no test samples, skipped");
      log::warn(ds.building_id, ": no test samples, skipped");
      continue;
    }
    acc.begin_client(ds.building_id);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto out = predictor(ds.input(i));
      const auto target = ds.target(i);
      actual.resize(ds.horizon);
      predicted.resize(ds.horizon);
      for (std::size_t h = 0; h < ds.horizon; ++h) {
        actual[h] = ds.norm.denormalize(target[h]);
        predicted[h] = ds.norm.denormalize(out[h]);
      }
      acc.add(actual, predicted);
    }
    acc.end_client();
  }
}

template <typename T>
WindowPredictor model_predictor(const Params<T>& params, const ModelArch& arch) {
  auto w = std::make_shared<Params<double>>(params.template cast<double>());
  auto tape = std::make_shared<Tape>();
  return [w, tape, arch](std::span<const double> input) {
    forward_into(*w, arch, input, *tape);
    return tape->prediction;
  };
}

inline WindowPredictor persistence_predictor(std::size_t horizon) {
  return [horizon](std::span<const double> input) {
    return std::vector<double>(horizon, input.back());
  };
}

template <typename T>
EvalReport evaluate_model(const Params<T>& params, const ModelArch& arch,
                          const std::vector<WindowedDataset>& test_clients,
                          double mape_floor = kDefaultMapeFloor,
                          std::string population = "model") {
  arch.validate();
  MetricAccumulator acc(arch.horizon, mape_floor);
  accumulate_clients(acc, test_clients, model_predictor(params, arch));
  return acc.finish(std::move(population));
}

inline EvalReport persistence_baseline(const std::vector<WindowedDataset>& test_clients,
                                       std::size_t horizon,
                                       double mape_floor = kDefaultMapeFloor,
                                       std::string population = "persistence") {
  if (horizon < 1) throw ConfigError("persistence: horizon must be >= 1");
  for (const auto& ds : test_clients) {
    if (ds.lookback < 1) throw ConfigError("persistence: lookback must be >= 1");
  }
  MetricAccumulator acc(horizon, mape_floor);
  accumulate_clients(acc, test_clients, persistence_predictor(horizon));
  return acc.finish(std::move(population));
}

// ---------------------------------------------------------------------------
// Emission

inline json to_json(const HorizonMetrics& m) {
  return {{"step", m.step}, {"minutes", m.minutes}, {"rmse", m.rmse},
          {"mape", m.mape}, {"accuracy", m.accuracy}};
}

inline json to_json(const EvalReport& r) {
  json steps = json::array();
  for (const auto& s : r.steps) steps.push_back(to_json(s));
  json client_avg = json::array();
  for (std::size_t h = 0; h < r.client_averaged_mape.size(); ++h) {
    client_avg.push_back({{"step", h + 1},
                          {"mape", r.client_averaged_mape[h]},
                          {"accuracy", 100.0 - r.client_averaged_mape[h]}});
  }
  return {{"population", r.population},
          {"n_clients", r.n_clients},
          {"n_samples", r.n_samples},
          {"steps", steps},
          {"aggregate", {{"rmse", r.aggregate.rmse},
                         {"mape", r.aggregate.mape},
                         {"accuracy", r.aggregate.accuracy}}},
          {"client_averaged", client_avg},
          {"warnings", r.warnings}};
}

inline std::string csv_header() {
  return "population,step,minutes,rmse_kwh,mape_pct,accuracy_pct,n_samples\n";
}

inline std::string to_csv_rows(const EvalReport& r) {
  std::ostringstream oss;
  oss.precision(17);
  for (const auto& s : r.steps) {
    oss << r.population << ',' << s.step << ',' << s.minutes << ',' << s.rmse << ','
        << s.mape << ',' << s.accuracy << ',' << r.n_samples << '\n';
  }
  return oss.str();
}

}  // namespace fedload
