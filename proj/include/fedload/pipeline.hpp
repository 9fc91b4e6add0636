#pragma once

// Subcommand implementations behind the CLI: synth, cluster, simulate,
// eval, serve, client. Every file they write lands under
// RunConfig::output_dir (client writes nothing).

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fedload/client.hpp"
#include "fedload/cluster.hpp"
#include "fedload/config.hpp"
#include "fedload/data.hpp"
#include "fedload/error.hpp"
#include "fedload/eval.hpp"
#include "fedload/federated.hpp"
#include "fedload/log.hpp"
#include "fedload/server.hpp"
#include "fedload/wire.hpp"

namespace fedload {

namespace detail {

// Prefixes any library error with the pipeline stage it came from.
template <typename F>
auto stage(std::string_view name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    rethrow_prefixed(e, "[" + std::string(name) + "] ");
  }
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create '" + dir.string() + "': " + ec.message());
}

inline void write_binary_file(const std::filesystem::path& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("write failed for '" + path.string() + "'");
}

inline Bytes read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Population loading

struct Building {
  ConsumptionSeries series;
  Role role = Role::train;
};

inline std::vector<Building> load_manifest_buildings(const std::filesystem::path& path) {
  const Manifest m = read_manifest(path);
  std::vector<Building> out;
  for (const auto& e : m.entries) {
    Building b;
    b.series = ingest_csv(m.resolve(e));
    b.series.building_id = e.id;
    b.role = e.role;
    out.push_back(std::move(b));
  }
  return out;
}

inline std::vector<Building> load_population(const RunConfig& cfg) {
  if (cfg.manifest) return load_manifest_buildings(*cfg.manifest);
  if (cfg.generator) {
    std::vector<Building> out;
    for (auto& sb : synth_population(*cfg.generator, cfg.generator->seed)) {
      out.push_back({std::move(sb.series), sb.holdout ? Role::test : Role::train});
    }
    return out;
  }
  throw ConfigError("config.data: a 'manifest' or 'generator' is required");
}

struct PreparedClient {
  std::string id;
  Role role = Role::train;
  SplitResult split;
  std::optional<SummaryVector> summary;
};

struct Population {
  std::vector<PreparedClient> clients;
  std::vector<std::string> warnings;

  // Train splits of training-role clients with a non-empty train set.
  std::map<std::string, WindowedDataset> train_sets() const {
    std::map<std::string, WindowedDataset> out;
    for (const auto& c : clients) {
      if (c.role == Role::train && !c.split.train.empty()) out.emplace(c.id, c.split.train);
    }
    return out;
  }

  std::vector<SummaryVector> train_summaries() const {
    std::vector<SummaryVector> out;
    for (const auto& c : clients) {
      if (c.role == Role::train && c.summary && !c.split.train.empty()) out.push_back(*c.summary);
    }
    return out;
  }

  std::vector<EvalClient> eval_clients(Role role) const {
    std::vector<EvalClient> out;
    for (const auto& c : clients) {
      if (c.role == role) out.push_back({c.split.test, c.summary});
    }
    return out;
  }

  std::vector<WindowedDataset> test_sets(Role role) const {
    std::vector<WindowedDataset> out;
    for (const auto& c : clients) {
      if (c.role == role) out.push_back(c.split.test);
    }
    return out;
  }
};

// Normalize, window and split every building; summaries are computed over
// `summary_days` when given.
inline Population prepare_population(const std::vector<Building>& buildings,
                                     const ModelArch& arch, double train_fraction,
                                     std::optional<std::size_t> summary_days) {
  Population pop;
  for (const auto& b : buildings) {
    PreparedClient c;
    c.id = b.series.building_id;
    c.role = b.role;
    c.split = prepare_client(b.series, arch.lookback, arch.horizon, train_fraction);
    if (!c.split.warning.empty()) {
      log::warn(c.split.warning);
      pop.warnings.push_back(c.split.warning);
    }
    if (summary_days) c.summary = consumption_summary(b.series, *summary_days);
    pop.clients.push_back(std::move(c));
  }
  return pop;
}

// ---------------------------------------------------------------------------
// Simulation

struct FlavorResult {
  std::string name;  // "clustered" or "global"
  std::optional<ClusterModel> clusters;
  std::map<int, GlobalModelState<float>> states;
  GlobalEvaluation heldout;   // test splits of held-out clients
  GlobalEvaluation training;  // test splits of training clients
};

struct SimulationResult {
  std::vector<FlavorResult> flavors;
  EvalReport persistence_heldout;
  EvalReport persistence_training;
  std::vector<std::string> warnings;

  const FlavorResult& flavor(std::string_view name) const {
    for (const auto& f : flavors) {
      if (f.name == name) return f;
    }
    throw ConfigError("no '" + std::string(name) + "' results in this run");
  }
};

inline ClusterModel fit_clusters(const std::vector<SummaryVector>& summaries,
                                 const ClusteringOptions& opts, std::uint64_t seed) {
  KMeansOptions km = opts.kmeans;
  km.seed = seed;
  return kmeans_fit(summaries, opts.k, km);
}

inline SimulationResult simulate(const RunConfig& cfg, const Population& pop) {
  SimulationResult res;
  res.warnings = pop.warnings;
  const auto train = pop.train_sets();
  const auto heldout = pop.eval_clients(Role::test);
  const auto training = pop.eval_clients(Role::train);
  if (heldout.empty()) {
    res.warnings.push_back("no held-out clients; held-out report is empty");
    log::warn(res.warnings.back());
  }

  std::vector<std::string> names;
  if (cfg.clustering.enabled) names.push_back("clustered");
  if (!cfg.clustering.enabled || cfg.compare_unclustered) names.push_back("global");

  for (const auto& name : names) {
    FlavorResult f;
    f.name = name;
    if (name == "clustered") {
      f.clusters = detail::stage("cluster", [&] {
        return fit_clusters(pop.train_summaries(), cfg.clustering, cfg.hp.seed);
      });
    }
    const ClusterModel* cm = f.clusters ? &*f.clusters : nullptr;
    f.states = detail::stage("train", [&] {
      return run_federated_training<float>(train, cm, cfg.arch, cfg.hp);
    });
    detail::stage("evaluate", [&] {
      f.heldout = evaluate_global(f.states, heldout, cm, cfg.arch, cfg.mape_floor, name + "/heldout");
      f.training =
          evaluate_global(f.states, training, cm, cfg.arch, cfg.mape_floor, name + "/training");
    });
    res.flavors.push_back(std::move(f));
  }
  res.persistence_heldout = persistence_baseline(pop.test_sets(Role::test), cfg.arch.horizon,
                                                 cfg.mape_floor, "persistence/heldout");
  res.persistence_training = persistence_baseline(pop.test_sets(Role::train), cfg.arch.horizon,
                                                  cfg.mape_floor, "persistence/training");
  return res;
}

inline std::string weights_file_name(std::string_view flavor, int cluster_id) {
  return std::string(flavor) + "_c" + std::to_string(cluster_id) + ".flw";
}

inline json to_json(const GlobalEvaluation& g) {
  json per = json::object();
  for (const auto& [cid, r] : g.per_cluster) per[std::to_string(cid)] = to_json(r);
  json avg = json::array();
  for (std::size_t h = 0; h < g.mean_cluster_accuracy.size(); ++h) {
    avg.push_back({{"step", h + 1}, {"accuracy", g.mean_cluster_accuracy[h]}});
  }
  return {{"overall", to_json(g.overall)},
          {"per_cluster", per},
          {"mean_cluster_accuracy", avg}};
}

inline std::string history_csv(const std::map<int, GlobalModelState<float>>& states) {
  std::ostringstream oss;
  oss.precision(17);
  oss << "cluster,round,mean_local_loss,selected\n";
  for (const auto& [cid, st] : states) {
    for (const auto& r : st.history) {
      oss << cid << ',' << r.round << ',' << r.mean_local_loss << ',';
      for (std::size_t i = 0; i < r.selected.size(); ++i) oss << (i ? ";" : "") << r.selected[i];
      oss << '\n';
    }
  }
  return oss.str();
}

// Writes weights/<flavor>_c<k>.flw for every cluster and returns the
// manifest fragment describing them.
inline json write_states(const std::filesystem::path& out_dir, std::string_view flavor,
                         const std::map<int, GlobalModelState<float>>& states,
                         const ModelArch& arch) {
  detail::ensure_dir(out_dir / "weights");
  json models = json::array();
  for (const auto& [cid, st] : states) {
    const std::string file = "weights/" + weights_file_name(flavor, cid);
    detail::write_binary_file(out_dir / file,
                              serialize_weights(st.params, arch, static_cast<std::uint32_t>(st.round)));
    models.push_back({{"cluster", cid}, {"rounds", st.round}, {"weights", file}});
  }
  return models;
}

inline SimulationResult cmd_simulate(const RunConfig& cfg) {
  const auto buildings = detail::stage("ingest", [&] { return load_population(cfg); });
  const Population pop = detail::stage("prepare", [&] {
    return prepare_population(buildings, cfg.arch, cfg.train_fraction,
                              cfg.clustering.enabled
                                  ? std::optional<std::size_t>(cfg.clustering.period_days)
                                  : std::nullopt);
  });
  SimulationResult res = simulate(cfg, pop);

  detail::stage("write", [&] {
    const auto& out = cfg.output_dir;
    detail::ensure_dir(out);
    json flavors = json::object();
    json report = json::object();
    std::string csv = csv_header();
    for (const auto& f : res.flavors) {
      json entry = {{"models", write_states(out, f.name, f.states, cfg.arch)},
                    {"history", f.name + "_history.csv"}};
      if (f.clusters) {
        detail::write_text_file((out / (f.name + "_cluster_model.json")).string(),
                                to_json(*f.clusters).dump(2) + "\n");
        entry["cluster_model"] = f.name + "_cluster_model.json";
      }
      detail::write_text_file((out / (f.name + "_history.csv")).string(), history_csv(f.states));
      flavors[f.name] = entry;
      report[f.name] = {{"heldout", to_json(f.heldout)}, {"training", to_json(f.training)}};
      for (const auto* g : {&f.heldout, &f.training}) {
        csv += to_csv_rows(g->overall);
        for (const auto& [cid, r] : g->per_cluster) csv += to_csv_rows(r);
      }
    }
    report["persistence"] = {{"heldout", to_json(res.persistence_heldout)},
                             {"training", to_json(res.persistence_training)}};
    report["warnings"] = res.warnings;
    csv += to_csv_rows(res.persistence_heldout);
    csv += to_csv_rows(res.persistence_training);

    std::vector<std::string> train_ids, heldout_ids;
    for (const auto& c : pop.clients) (c.role == Role::train ? train_ids : heldout_ids).push_back(c.id);
    json manifest = {{"config", to_json(cfg)},
                     {"training_clients", train_ids},
                     {"heldout_clients", heldout_ids},
                     {"flavors", flavors},
                     {"report", "report.json"},
                     {"report_csv", "report.csv"}};
    detail::write_text_file((out / "run_manifest.json").string(), manifest.dump(2) + "\n");
    detail::write_text_file((out / "report.json").string(), report.dump(2) + "\n");
    detail::write_text_file((out / "report.csv").string(), csv);
  });
  return res;
}

// ---------------------------------------------------------------------------
// synth / cluster / eval

inline Manifest cmd_synth(const RunConfig& cfg) {
  if (!cfg.generator) throw ConfigError("synth: config.data.generator is required");
  const auto pop = detail::stage("synth", [&] {
    return synth_population(*cfg.generator, cfg.generator->seed);
  });
  Manifest m;
  m.base_dir = cfg.output_dir;
  detail::stage("write", [&] {
    detail::ensure_dir(cfg.output_dir);
    for (const auto& b : pop) {
      const std::string file = b.series.building_id + ".csv";
      write_csv(b.series, cfg.output_dir / file);
      m.entries.push_back({b.series.building_id, file, "SYN", b.holdout ? Role::test : Role::train});
    }
    write_manifest(m, cfg.output_dir / "manifest.json");
  });
  return m;
}

struct ClusterDiagnostics {
  ClusterModel model;
  std::vector<int> ks;
  std::vector<double> inertia;
  std::vector<std::optional<double>> silhouette;  // empty for k = 1
};

inline ClusterDiagnostics cmd_cluster(const RunConfig& cfg) {
  const auto buildings = detail::stage("ingest", [&] { return load_population(cfg); });
  std::vector<SummaryVector> summaries = detail::stage("summarize", [&] {
    std::vector<SummaryVector> s;
    for (const auto& b : buildings) {
      if (b.role == Role::train) s.push_back(consumption_summary(b.series, cfg.clustering.period_days));
    }
    return s;
  });
  ClusterDiagnostics d;
  detail::stage("cluster", [&] {
    if (summaries.size() < static_cast<std::size_t>(cfg.clustering.k)) {
      throw DataError("k = " + std::to_string(cfg.clustering.k) + " exceeds the " +
                      std::to_string(summaries.size()) + " available clients");
    }
    d.model = fit_clusters(summaries, cfg.clustering, cfg.hp.seed);
    const int k_hi = std::min<int>(cfg.k_max, static_cast<int>(summaries.size()));
    for (int k = cfg.k_min; k <= k_hi; ++k) d.ks.push_back(k);
    KMeansOptions km = cfg.clustering.kmeans;
    km.seed = cfg.hp.seed;
    for (const auto& m : fit_k_range(summaries, d.ks, km)) {
      d.inertia.push_back(m.inertia);
      std::optional<double> sil;
      if (m.k >= 2) {
        try {
          sil = silhouette(summaries, m);
        } catch (const DataError& e) {
          log::warn("silhouette for k = ", m.k, ": ", e.what());
        }
      }
      d.silhouette.push_back(sil);
    }
  });
  detail::stage("write", [&] {
    detail::ensure_dir(cfg.output_dir);
    detail::write_text_file((cfg.output_dir / "cluster_model.json").string(),
                            to_json(d.model).dump(2) + "\n");
    std::ostringstream oss;
    oss.precision(17);
    oss << "k,inertia,silhouette\n";
    for (std::size_t i = 0; i < d.ks.size(); ++i) {
      oss << d.ks[i] << ',' << d.inertia[i] << ',';
      if (d.silhouette[i]) oss << *d.silhouette[i];
      oss << '\n';
    }
    detail::write_text_file((cfg.output_dir / "cluster_diagnostics.csv").string(), oss.str());
  });
  return d;
}

struct EvalResult {
  DecodedWeights weights;
  EvalReport model;
  EvalReport persistence;
};

// Evaluates a weight blob on the test split of every manifest entry. No
// training happens here.
inline EvalResult cmd_eval(const RunConfig& cfg) {
  if (!cfg.weights) throw ConfigError("eval: a weights blob is required");
  const auto manifest_path = cfg.test_manifest ? cfg.test_manifest : cfg.manifest;
  if (!manifest_path) throw ConfigError("eval: a test manifest is required");
  EvalResult res;
  res.weights = detail::stage("load", [&] {
    try {
      return deserialize_weights(detail::read_binary_file(*cfg.weights));
    } catch (const ProtocolError& e) {
      throw ConfigError(cfg.weights->string() + ": " + e.what());
    }
  });
  const ModelArch& arch = res.weights.arch;
  if (cfg.arch_explicit && arch != cfg.arch) {
    throw ConfigError("[load] blob architecture (" + std::string(to_string(arch.cell)) + ", hidden " +
                      std::to_string(arch.hidden_dim) + ", L " + std::to_string(arch.lookback) +
                      ", H " + std::to_string(arch.horizon) + ") does not match the config");
  }
  const auto buildings = detail::stage("ingest", [&] { return load_manifest_buildings(*manifest_path); });
  const Population pop = detail::stage("prepare", [&] {
    return prepare_population(buildings, arch, cfg.train_fraction, std::nullopt);
  });
  std::vector<WindowedDataset> tests;
  for (const auto& c : pop.clients) tests.push_back(c.split.test);
  res.model = evaluate_model(res.weights.params, arch, tests, cfg.mape_floor, "eval");
  res.persistence = persistence_baseline(tests, arch.horizon, cfg.mape_floor, "persistence");
  if (tests.empty()) log::warn("eval: manifest lists no buildings");
  detail::stage("write", [&] {
    detail::ensure_dir(cfg.output_dir);
    json j = {{"model", to_json(res.model)}, {"persistence", to_json(res.persistence)}};
    detail::write_text_file((cfg.output_dir / "eval_report.json").string(), j.dump(2) + "\n");
    detail::write_text_file((cfg.output_dir / "eval_report.csv").string(),
                            csv_header() + to_csv_rows(res.model) + to_csv_rows(res.persistence));
  });
  return res;
}

// ---------------------------------------------------------------------------
// Networked roles

inline ServeResult cmd_serve(const RunConfig& cfg, const std::string& bind, std::size_t expected) {
  Server server(bind, expected, cfg.server_options());
  log::info("listening on port ", server.port(), ", expecting ", expected, " clients");
  ServeResult res = server.run();
  detail::stage("write", [&] {
    detail::ensure_dir(cfg.output_dir);
    const std::string flavor = res.clusters ? "clustered" : "global";
    json manifest = {{"config", to_json(cfg)},
                     {"flavors", {{flavor, {{"models", write_states(cfg.output_dir, flavor, res.states, cfg.arch)},
                                            {"history", flavor + "_history.csv"}}}}},
                     {"rejected", res.rejected}};
    if (res.clusters) {
      detail::write_text_file((cfg.output_dir / (flavor + "_cluster_model.json")).string(),
                              to_json(*res.clusters).dump(2) + "\n");
    }
    detail::write_text_file((cfg.output_dir / (flavor + "_history.csv")).string(),
                            history_csv(res.states));
    detail::write_text_file((cfg.output_dir / "run_manifest.json").string(),
                            manifest.dump(2) + "\n");
  });
  return res;
}

inline ClientResult cmd_client(const ClientOptions& opts, const std::filesystem::path& data) {
  ConsumptionSeries series = detail::stage("ingest", [&] { return ingest_csv(data); });
  return client_run(opts, std::move(series));
}

}  // namespace fedload
