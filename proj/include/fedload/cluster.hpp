#pragma once

// K-means (Lloyd iterations, k-means++ seeding, restarts) over daily-mean
// summary vectors, plus elbow and silhouette diagnostics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedload/data.hpp"
#include "fedload/error.hpp"
#include "fedload/json_util.hpp"
#include "fedload/rng.hpp"

namespace fedload {

struct ClusterModel {
  int k = 0;
  std::vector<std::vector<double>> centroids;  // k x D, kWh
  std::map<std::string, int> assignments;      // building id -> cluster
  double inertia = 0.0;
  std::uint64_t seed = 0;

  std::size_t dim() const { return centroids.empty() ? 0 : centroids[0].size(); }
};

struct KMeansOptions {
  std::uint64_t seed = 0;
  int max_iters = 300;
  double tol = 1e-8;
  int restarts = 10;
};

// Inertia observed after every assignment step of every restart, for
// checking Lloyd monotonicity.
struct KMeansTrace {
  std::vector<std::vector<double>> inertia_per_restart;
};

inline double squared_distance(std::span<const double> a,
                               std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

namespace detail {

using Points = std::vector<std::span<const double>>;

// Nearest centroid, ties to the lowest index.
inline int nearest(std::span<const double> p,
                   const std::vector<std::vector<double>>& centroids,
                   double* dist_out = nullptr) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = squared_distance(p, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (dist_out) *dist_out = best_d;
  return best;
}

inline std::vector<std::vector<double>> kmeanspp_init(const Points& pts, int k,
                                                      Rng& rng) {
  const std::size_t n = pts.size();
  std::vector<std::vector<double>> centroids;
  std::vector<bool> chosen(n, false);
  std::size_t first = rng.below(n);
  centroids.emplace_back(pts[first].begin(), pts[first].end());
  chosen[first] = true;
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(pts[i], centroids[0]);
  while (static_cast<int>(centroids.size()) < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = n;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        pick = i;
        r -= d2[i];
        if (r < 0.0) break;
      }
    }
    if (pick == n) {
      // All remaining points coincide with a centroid: take the first unused.
      for (std::size_t i = 0; i < n; ++i) {
        if (!chosen[i]) {
          pick = i;
          break;
        }
      }
    }
    chosen[pick] = true;
    centroids.emplace_back(pts[pick].begin(), pts[pick].end());
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(pts[i], centroids.back()));
    }
  }
  return centroids;
}

struct LloydResult {
  std::vector<std::vector<double>> centroids;
  std::vector<int> labels;
  double inertia = 0.0;
};

inline LloydResult lloyd(const Points& pts,
                         std::vector<std::vector<double>> centroids,
                         int max_iters, double tol,
                         std::vector<double>* trace) {
  const std::size_t n = pts.size();
  const std::size_t k = centroids.size();
  const std::size_t dim = pts.empty() ? 0 : pts[0].size();
  std::vector<int> labels(n, 0);
  std::vector<double> dist(n, 0.0);

  auto assign_all = [&] {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = nearest(pts[i], centroids, &dist[i]);
      inertia += dist[i];
    }
    return inertia;
  };

  double inertia = assign_all();
  if (trace) trace->push_back(inertia);
  for (int iter = 0; iter < max_iters; ++iter) {
    std::vector<std::vector<double>> next(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto& acc = next[static_cast<std::size_t>(labels[i])];
      for (std::size_t d = 0; d < dim; ++d) acc[d] += pts[i][d];
      ++counts[static_cast<std::size_t>(labels[i])];
    }
    std::vector<bool> taken(n, false);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        for (double& v : next[c]) v /= static_cast<double>(counts[c]);
        continue;
      }
      // Empty cluster: reseed at the point farthest from its centroid.
      std::size_t far = n;
      double far_d = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!taken[i] && dist[i] > far_d) {
          far_d = dist[i];
          far = i;
        }
      }
      if (far == n) {
        next[c] = centroids[c];
      } else {
        taken[far] = true;
        next[c].assign(pts[far].begin(), pts[far].end());
      }
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      shift = std::max(shift, std::sqrt(squared_distance(next[c], centroids[c])));
    }
    centroids = std::move(next);
    inertia = assign_all();
    if (trace) trace->push_back(inertia);
    if (shift < tol) break;
  }
  return {std::move(centroids), std::move(labels), inertia};
}

inline void check_summaries(const std::vector<SummaryVector>& summaries) {
  if (summaries.empty()) throw DataError("kmeans: no summaries");
  const std::size_t dim = summaries[0].dim();
  if (dim == 0) throw DataError("kmeans: empty summary vectors");
  for (const auto& s : summaries) {
    if (s.dim() != dim) {
      throw DataError("kmeans: dimension mismatch for '" + s.building_id +
                      "' (" + std::to_string(s.dim()) + " vs " +
                      std::to_string(dim) + ")");
    }
  }
}

// Summaries sorted by id, so the seeded fit does not depend on input order.
inline std::vector<const SummaryVector*> canonical_order(
    const std::vector<SummaryVector>& summaries) {
  std::vector<const SummaryVector*> order;
  order.reserve(summaries.size());
  for (const auto& s : summaries) order.push_back(&s);
  std::stable_sort(order.begin(), order.end(),
                   [](const SummaryVector* a, const SummaryVector* b) {
                     return a->building_id < b->building_id;
                   });
  return order;
}

inline ClusterModel fit_impl(
    const std::vector<SummaryVector>& summaries, int k,
    const KMeansOptions& opts, KMeansTrace* trace,
    const std::vector<std::vector<double>>* warm_start) {
  check_summaries(summaries);
  if (k < 1) throw ConfigError("kmeans: k must be >= 1");
  if (static_cast<std::size_t>(k) > summaries.size()) {
    throw DataError("kmeans: k = " + std::to_string(k) + " exceeds " +
                    std::to_string(summaries.size()) + " clients");
  }
  const auto order = canonical_order(summaries);
  Points pts;
  for (const auto* s : order) pts.emplace_back(s->daily_means);

  std::optional<LloydResult> best;
  auto consider = [&](std::vector<std::vector<double>> init) {
    std::vector<double>* t = nullptr;
    if (trace) t = &trace->inertia_per_restart.emplace_back();
    LloydResult r = lloyd(pts, std::move(init), opts.max_iters, opts.tol, t);
    if (!best || r.inertia < best->inertia) best = std::move(r);
  };

  const int restarts = std::max(1, opts.restarts);
  for (int r = 0; r < restarts; ++r) {
    Rng rng(derive_seed({opts.seed, static_cast<std::uint64_t>(r)}));
    consider(kmeanspp_init(pts, k, rng));
  }
  if (warm_start) consider(*warm_start);

  ClusterModel model;
  model.k = k;
  model.seed = opts.seed;
  model.centroids = std::move(best->centroids);
  model.inertia = best->inertia;
  for (std::size_t i = 0; i < order.size(); ++i) {
    model.assignments[order[i]->building_id] = best->labels[i];
  }
  return model;
}

}  // namespace detail

inline ClusterModel kmeans_fit(const std::vector<SummaryVector>& summaries,
                               int k, const KMeansOptions& opts = {},
                               KMeansTrace* trace = nullptr) {
  return detail::fit_impl(summaries, k, opts, trace, nullptr);
}

inline int assign(const ClusterModel& model, const SummaryVector& summary) {
  if (model.centroids.empty()) throw DataError("assign: empty cluster model");
  if (summary.dim() != model.dim()) {
    throw DataError("assign: '" + summary.building_id + "' has dimension " +
                    std::to_string(summary.dim()) + ", model expects " +
                    std::to_string(model.dim()));
  }
  return detail::nearest(summary.daily_means, model.centroids);
}

inline double recompute_inertia(const ClusterModel& model,
                                const std::vector<SummaryVector>& summaries) {
  double s = 0.0;
  for (const auto& sv : summaries) {
    const int c = model.assignments.at(sv.building_id);
    s += squared_distance(sv.daily_means,
                          model.centroids[static_cast<std::size_t>(c)]);
  }
  return s;
}

// Fits every k in `k_range` (ascending). Each k after the first also runs a
// restart seeded from the previous k's centroids plus the worst-fit points,
// which makes inertia non-increasing in k.
inline std::vector<ClusterModel> fit_k_range(const std::vector<SummaryVector>& summaries,
                                             const std::vector<int>& k_range,
                                             const KMeansOptions& opts = {}) {
  std::vector<int> ks = k_range;
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  std::vector<ClusterModel> models;
  for (int k : ks) {
    if (k < 1 || static_cast<std::size_t>(k) > summaries.size()) {
      throw ConfigError("k = " + std::to_string(k) + " outside [1, " +
                        std::to_string(summaries.size()) + "]");
    }
    std::optional<std::vector<std::vector<double>>> warm;
    if (!models.empty()) {
      const ClusterModel& prev = models.back();
      warm = prev.centroids;
      const auto order = detail::canonical_order(summaries);
      std::vector<double> dist;
      for (const auto* s : order) {
        double d = 0.0;
        detail::nearest(s->daily_means, prev.centroids, &d);
        dist.push_back(d);
      }
      std::vector<std::size_t> idx(order.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::stable_sort(idx.begin(), idx.end(),
                       [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
      for (std::size_t j = 0; static_cast<int>(warm->size()) < k && j < idx.size(); ++j) {
        warm->push_back(order[idx[j]]->daily_means);
      }
    }
    models.push_back(detail::fit_impl(summaries, k, opts, nullptr, warm ? &*warm : nullptr));
  }
  return models;
}

// Elbow curve: (k, best inertia) for each requested k.
inline std::vector<std::pair<int, double>> inertia_curve(
    const std::vector<SummaryVector>& summaries, const std::vector<int>& k_range,
    const KMeansOptions& opts = {}) {
  std::vector<std::pair<int, double>> out;
  for (const auto& m : fit_k_range(summaries, k_range, opts)) out.emplace_back(m.k, m.inertia);
  return out;
}

// Mean silhouette with Euclidean distance. Labels must cover 0..k-1 with
// k >= 2; singleton clusters contribute 0.
inline double silhouette(const std::vector<SummaryVector>& summaries,
                         const std::vector<int>& labels) {
  if (summaries.size() != labels.size()) {
    throw DataError("silhouette: label count mismatch");
  }
  detail::check_summaries(summaries);
  const int k = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::size_t> sizes(static_cast<std::size_t>(std::max(k, 0)), 0);
  for (int l : labels) {
    if (l < 0) throw DataError("silhouette: negative label");
    ++sizes[static_cast<std::size_t>(l)];
  }
  if (k < 2) throw DataError("silhouette: needs at least 2 clusters");
  for (int c = 0; c < k; ++c) {
    if (sizes[static_cast<std::size_t>(c)] == 0) {
      throw DataError("silhouette: cluster " + std::to_string(c) + " is empty");
    }
  }
  const std::size_t n = summaries.size();
  double total = 0.0;
  std::vector<double> sum_to(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i) {
    const auto own = static_cast<std::size_t>(labels[i]);
    if (sizes[own] == 1) continue;
    std::fill(sum_to.begin(), sum_to.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      sum_to[static_cast<std::size_t>(labels[j])] +=
          std::sqrt(squared_distance(summaries[i].daily_means, summaries[j].daily_means));
    }
    const double a = sum_to[own] / static_cast<double>(sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < sum_to.size(); ++c) {
      if (c == own) continue;
      b = std::min(b, sum_to[c] / static_cast<double>(sizes[c]));
    }
    const double m = std::max(a, b);
    if (m > 0.0) total += (b - a) / m;
  }
  return total / static_cast<double>(n);
}

inline double silhouette(const std::vector<SummaryVector>& summaries,
                         const ClusterModel& model) {
  std::vector<int> labels;
  labels.reserve(summaries.size());
  for (const auto& s : summaries) labels.push_back(model.assignments.at(s.building_id));
  return silhouette(summaries, labels);
}

inline json to_json(const ClusterModel& m) {
  json assignments = json::object();
  for (const auto& [id, c] : m.assignments) assignments[id] = c;
  return {{"k", m.k},
          {"centroids", m.centroids},
          {"assignments", assignments},
          {"seed", m.seed},
          {"inertia", m.inertia}};
}

inline ClusterModel cluster_model_from_json(const json& j) {
  detail::reject_unknown_keys(j, {"k", "centroids", "assignments", "seed", "inertia"},
                              "cluster model");
  ClusterModel m;
  try {
    m.k = j.at("k").get<int>();
    m.centroids = j.at("centroids").get<std::vector<std::vector<double>>>();
    m.assignments = j.at("assignments").get<std::map<std::string, int>>();
    m.seed = j.value("seed", std::uint64_t{0});
    m.inertia = j.value("inertia", 0.0);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("cluster model: ") + e.what());
  }
  if (m.k < 1 || static_cast<std::size_t>(m.k) != m.centroids.size()) {
    throw ConfigError("cluster model: k does not match centroid count");
  }
  for (const auto& [id, c] : m.assignments) {
    if (c < 0 || c >= m.k) throw ConfigError("cluster model: bad assignment for " + id);
  }
  return m;
}

}  // namespace fedload
