#pragma once

// In-process federated training: per-cluster global models, seeded client
// selection, concurrent ClientUpdate and synchronous FedAvg aggregation.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "fedload/cluster.hpp"
#include "fedload/data.hpp"
#include "fedload/error.hpp"
#include "fedload/eval.hpp"
#include "fedload/log.hpp"
#include "fedload/neural.hpp"
#include "fedload/params.hpp"
#include "fedload/rng.hpp"

namespace fedload {

struct HyperParams {
  std::size_t clients_per_round = 0;  // M; 0 selects every member
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  std::size_t local_epochs = 2;
  std::size_t rounds = 500;
  LossSpec loss;
  std::uint64_t seed = 0;
  bool weighted_aggregation = false;
  std::size_t threads = 1;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    loss.validate();
  }

  // M for a cluster with `members` clients.
  std::size_t per_round(std::size_t members) const {
    return clients_per_round == 0 ? members : std::min(clients_per_round, members);
  }
};

struct RoundRecord {
  std::size_t round = 0;  // 1-based round that produced this record
  std::vector<std::string> selected;
  double mean_local_loss = 0.0;
};

template <typename T = float>
struct GlobalModelState {
  int cluster_id = 0;
  std::size_t round = 0;
  Params<T> params;
  std::vector<RoundRecord> history;
};

// ---------------------------------------------------------------------------
// Seeds shared by the simulator and the networked roles.

inline std::uint64_t init_seed(std::uint64_t seed) { return derive_seed({seed, 0x77300ULL}); }

inline std::uint64_t selection_seed(std::uint64_t seed, int cluster_id, std::size_t round) {
  return derive_seed({seed, 0x5e1ecULL, static_cast<std::uint64_t>(cluster_id), round});
}

inline std::uint64_t client_seed(std::uint64_t seed, int cluster_id, std::size_t round,
                                 const std::string& client_id) {
  return derive_seed({seed, 0xc11e47ULL, static_cast<std::uint64_t>(cluster_id), round,
                      hash_id(client_id)});
}

inline LocalTrainConfig local_config(const HyperParams& hp, int cluster_id,
                                     std::size_t round, const std::string& client_id) {
  return {hp.learning_rate, hp.batch_size, hp.local_epochs, hp.loss,
          client_seed(hp.seed, cluster_id, round, client_id)};
}

// ---------------------------------------------------------------------------
// Aggregation

// Per-entry mean of the local models, accumulated in double. With weights
// (e.g. sample counts), a weighted mean instead.
template <typename T>
Params<T> fedavg_aggregate(const std::vector<Params<T>>& locals,
                           std::span<const double> weights = {}) {
  if (locals.empty()) throw DataError("fedavg: no local models");
  if (!weights.empty() && weights.size() != locals.size()) {
    throw DataError("fedavg: weight count mismatch");
  }
  for (const auto& p : locals) {
    if (!p.same_shape(locals.front())) throw DataError("fedavg: shape mismatch");
  }
  double total = 0.0;
  if (weights.empty()) {
    total = static_cast<double>(locals.size());
  } else {
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw DataError("fedavg: non-positive total weight");
  }
  Params<T> out = locals.front();
  std::vector<double> acc;
  for (std::size_t ti = 0; ti < out.tensors().size(); ++ti) {
    auto& dst = out.tensors()[ti].values;
    acc.assign(dst.size(), 0.0);
    for (std::size_t li = 0; li < locals.size(); ++li) {
      const auto& src = locals[li].tensors()[ti].values;
      const double w = weights.empty() ? 1.0 : weights[li];
      for (std::size_t k = 0; k < src.size(); ++k) acc[k] += w * static_cast<double>(src[k]);
    }
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(acc[k] / total);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Client selection

// Uniform sample of m members without replacement, determined by
// (seed, cluster, round). Returned sorted by id.
inline std::vector<std::string> select_clients(std::vector<std::string> members,
                                               std::size_t m, std::size_t round,
                                               std::uint64_t seed, int cluster_id = 0) {
  if (m > members.size()) {
    throw ConfigError("select_clients: M = " + std::to_string(m) + " exceeds " +
                      std::to_string(members.size()) + " members");
  }
  std::sort(members.begin(), members.end());
  Rng rng(selection_seed(seed, cluster_id, round));
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(members.size() - i));
    std::swap(members[i], members[j]);
  }
  members.resize(m);
  std::sort(members.begin(), members.end());
  return members;
}

// ---------------------------------------------------------------------------
// Orchestration

namespace detail {

// Runs fn(i) for i in [0, n) on up to `threads` workers; the first failure
// by index is rethrown after all workers finish.
inline void parallel_for(std::size_t n, std::size_t threads,
                         const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) run(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

// Cluster id -> member ids. Without a cluster model every client is in
// cluster 0.
inline std::map<int, std::vector<std::string>> cluster_members(
    const std::vector<std::string>& client_ids, const ClusterModel* clusters) {
  std::map<int, std::vector<std::string>> members;
  if (!clusters) {
    members[0] = client_ids;
  } else {
    for (int c = 0; c < clusters->k; ++c) members[c];
    for (const auto& id : client_ids) {
      auto it = clusters->assignments.find(id);
      if (it == clusters->assignments.end()) {
        throw DataError("client '" + id + "' has no cluster assignment");
      }
      members[it->second].push_back(id);
    }
  }
  for (auto& [c, ids] : members) std::sort(ids.begin(), ids.end());
  return members;
}

// One synchronous round for one cluster. `train_one` produces the local
// model of a selected client; locals are reduced in client-id order.
template <typename T>
void run_round(GlobalModelState<T>& state, const std::vector<std::string>& members,
               const HyperParams& hp,
               const std::function<Params<T>(const std::string&, LocalTrainStats&)>& train_one,
               const std::function<double(const std::string&)>& sample_count) {
  const std::size_t t = state.round;
  const auto selected =
      select_clients(members, hp.per_round(members.size()), t, hp.seed, state.cluster_id);
  std::vector<Params<T>> locals(selected.size());
  std::vector<LocalTrainStats> stats(selected.size());
  detail::parallel_for(selected.size(), hp.threads, [&](std::size_t i) {
    try {
      locals[i] = train_one(selected[i], stats[i]);
    } catch (const Error& e) {
      throw Error(e.kind(), "round " + std::to_string(t + 1) + ", client '" +
                                selected[i] + "': " + e.what());
    }
  });
  std::vector<double> weights;
  if (hp.weighted_aggregation) {
    for (const auto& id : selected) weights.push_back(sample_count(id));
  }
  state.params = fedavg_aggregate(locals, weights);
  RoundRecord rec;
  rec.round = t + 1;
  rec.selected = selected;
  for (const auto& s : stats) rec.mean_local_loss += s.mean_loss;
  rec.mean_local_loss /= static_cast<double>(stats.size());
  state.history.push_back(std::move(rec));
  state.round = t + 1;
}

// Algorithm driver. `w0` defaults to init_params(arch, init_seed(hp.seed));
// every cluster starts from the same w0.
template <typename T = float>
std::map<int, GlobalModelState<T>> run_federated_training(
    const std::map<std::string, WindowedDataset>& clients,
    const ClusterModel* clusters, const ModelArch& arch, const HyperParams& hp,
    const Params<T>* w0 = nullptr) {
  arch.validate();
  hp.validate();
  std::vector<std::string> ids;
  for (const auto& [id, ds] : clients) {
    if (ds.empty()) throw DataError("client '" + id + "' has an empty train set");
    ids.push_back(id);
  }
  if (ids.empty()) throw DataError("no training clients");
  const Params<T> initial = w0 ? *w0 : init_params<T>(arch, init_seed(hp.seed));
  if (!initial.matches(arch)) throw ConfigError("initial params do not match arch");

  std::map<int, GlobalModelState<T>> states;
  for (const auto& [cid, members] : cluster_members(ids, clusters)) {
    GlobalModelState<T> st{cid, 0, initial, {}};
    if (members.empty()) {
      log::warn("cluster ", cid, " has no training clients; keeping w0");
      states.emplace(cid, std::move(st));
      continue;
    }
    for (std::size_t t = 0; t < hp.rounds; ++t) {
      const Params<T> global = st.params;
      run_round<T>(
          st, members, hp,
          [&](const std::string& id, LocalTrainStats& stats) {
            return train_local(global, arch, clients.at(id),
                               local_config(hp, cid, t, id), &stats);
          },
          [&](const std::string& id) { return static_cast<double>(clients.at(id).size()); });
      log::debug("cluster ", cid, " round ", st.round, " loss ",
                 st.history.back().mean_local_loss);
    }
    states.emplace(cid, std::move(st));
  }
  return states;
}

// ---------------------------------------------------------------------------
// Held-out evaluation

struct EvalClient {
  WindowedDataset test;
  std::optional<SummaryVector> summary;  // required when clustering is active
};

struct GlobalEvaluation {
  std::map<int, EvalReport> per_cluster;
  EvalReport overall;
  // Per-step mean over clusters of each cluster's accuracy ("average of
  // averages"), alongside the sample-pooled overall report.
  std::vector<double> mean_cluster_accuracy;
};

template <typename T>
GlobalEvaluation evaluate_global(const std::map<int, GlobalModelState<T>>& states,
                                 const std::vector<EvalClient>& test_clients,
                                 const ClusterModel* clusters, const ModelArch& arch,
                                 double mape_floor = kDefaultMapeFloor,
                                 const std::string& tag = "global") {
  MetricAccumulator overall(arch.horizon, mape_floor);
  std::map<int, MetricAccumulator> per_cluster;
  std::map<int, WindowPredictor> predictors;
  for (const auto& [cid, st] : states) {
    per_cluster.emplace(cid, MetricAccumulator(arch.horizon, mape_floor));
    predictors.emplace(cid, model_predictor(st.params, arch));
  }
  for (const auto& client : test_clients) {
    int cid = 0;
    if (clusters) {
      if (!client.summary) {
        throw DataError("evaluate: '" + client.test.building_id + "' lacks a summary vector");
      }
      cid = assign(*clusters, *client.summary);
    }
    auto pit = predictors.find(cid);
    if (pit == predictors.end()) {
      throw DataError("evaluate: no model for cluster " + std::to_string(cid));
    }
    const std::vector<WindowedDataset> one{client.test};
    accumulate_clients(overall, one, pit->second);
    accumulate_clients(per_cluster.at(cid), one, pit->second);
  }
  GlobalEvaluation out;
  out.overall = overall.finish(tag);
  if (test_clients.empty()) log::warn(tag, ": empty test set");
  std::size_t reporting = 0;
  out.mean_cluster_accuracy.assign(arch.horizon, 0.0);
  for (auto& [cid, acc] : per_cluster) {
    EvalReport r = acc.finish(tag + "/cluster" + std::to_string(cid));
    if (r.n_samples > 0) {
      for (std::size_t h = 0; h < arch.horizon; ++h) {
        out.mean_cluster_accuracy[h] += r.steps[h].accuracy;
      }
      ++reporting;
    }
    out.per_cluster.emplace(cid, std::move(r));
  }
  for (double& v : out.mean_cluster_accuracy) {
    v = reporting ? v / static_cast<double>(reporting) : 0.0;
  }
  return out;
}

inline json to_json(const RoundRecord& r) {
  return {{"round", r.round}, {"selected", r.selected}, {"mean_local_loss", r.mean_local_loss}};
}

}  // namespace fedload
