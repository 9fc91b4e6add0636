#pragma once

// JSON run configuration shared by every CLI subcommand. Unknown keys are
// rejected; every field has a default.

#include <filesystem>
#include <optional>
#include <string>

#include "fedload/cluster.hpp"
#include "fedload/data.hpp"
#include "fedload/error.hpp"
#include "fedload/eval.hpp"
#include "fedload/federated.hpp"
#include "fedload/json_util.hpp"
#include "fedload/params.hpp"
#include "fedload/protocol.hpp"
#include "fedload/server.hpp"
#include "fedload/wire.hpp"

namespace fedload {

struct RunConfig {
  std::string mode = "simulate";

  // Data source: a manifest of CSV files, or an in-memory synthetic
  // population (also what `synth` writes out).
  std::optional<std::filesystem::path> manifest;
  std::optional<SynthConfig> generator;

  ModelArch arch;
  bool arch_explicit = false;  // `arch` present in the file
  HyperParams hp;
  ClusteringOptions clustering;
  int k_min = 1;
  int k_max = 8;
  double train_fraction = 0.75;
  double mape_floor = kDefaultMapeFloor;
  bool compare_unclustered = true;

  std::optional<std::filesystem::path> weights;        // eval
  std::optional<std::filesystem::path> test_manifest;  // eval

  double round_timeout_s = 600.0;
  std::size_t max_frame_bytes = kDefaultMaxFrameBytes;

  std::filesystem::path output_dir = "out";

  RunConfig() {
    hp.clients_per_round = 25;
    hp.rounds = 500;
  }

  ServerOptions server_options() const {
    ServerOptions o;
    o.arch = arch;
    o.hp = hp;
    o.clustering = clustering;
    o.train_fraction = train_fraction;
    o.round_timeout = std::chrono::milliseconds(static_cast<long long>(round_timeout_s * 1000.0));
    o.max_frame_bytes = max_frame_bytes;
    return o;
  }
};

inline json to_json(const RunConfig& c) {
  json data = json::object();
  if (c.manifest) data["manifest"] = c.manifest->string();
  if (c.generator) data["generator"] = to_json(*c.generator);
  json j = {{"mode", c.mode},
            {"data", data},
            {"arch", to_json(c.arch)},
            {"hyper", to_json(c.hp)},
            {"clustering",
             {{"enabled", c.clustering.enabled},
              {"k", c.clustering.k},
              {"period_days", c.clustering.period_days},
              {"k_min", c.k_min},
              {"k_max", c.k_max},
              {"restarts", c.clustering.kmeans.restarts},
              {"max_iters", c.clustering.kmeans.max_iters},
              {"tol", c.clustering.kmeans.tol}}},
            {"train_fraction", c.train_fraction},
            {"mape_floor", c.mape_floor},
            {"compare_unclustered", c.compare_unclustered},
            {"round_timeout_s", c.round_timeout_s},
            {"max_frame_bytes", c.max_frame_bytes},
            {"output_dir", c.output_dir.string()}};
  if (c.weights) j["weights"] = c.weights->string();
  if (c.test_manifest) j["test_manifest"] = c.test_manifest->string();
  return j;
}

// Relative paths resolve against `base_dir` (the config file's directory).
inline RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
  detail::reject_unknown_keys(j,
                              {"mode", "data", "arch", "hyper", "clustering", "train_fraction",
                               "mape_floor", "compare_unclustered", "weights", "test_manifest",
                               "round_timeout_s", "max_frame_bytes", "output_dir"},
                              "config");
  RunConfig c;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  detail::read_opt(j, "mode", c.mode, "config");
  if (auto it = j.find("data"); it != j.end()) {
    detail::reject_unknown_keys(*it, {"manifest", "generator"}, "config.data");
    if (auto m = it->find("manifest"); m != it->end()) c.manifest = resolve(m->get<std::string>());
    if (auto g = it->find("generator"); g != it->end()) c.generator = synth_config_from_json(*g);
    if (c.manifest && c.generator) {
      throw ConfigError("config.data: give either 'manifest' or 'generator', not both");
    }
  }
  if (auto it = j.find("arch"); it != j.end()) {
    c.arch = arch_from_json(*it);
    c.arch_explicit = true;
  }
  if (auto it = j.find("hyper"); it != j.end()) {
    if (!it->is_object()) throw ConfigError("config.hyper: expected a JSON object");
    // Overlay onto the config-level defaults (M = 25, T = 500).
    json merged = to_json(c.hp);
    for (const auto& item : it->items()) merged[item.key()] = item.value();
    c.hp = hyper_from_json(merged);
  }
  if (auto it = j.find("clustering"); it != j.end()) {
    const char* ctx = "config.clustering";
    detail::reject_unknown_keys(*it,
                                {"enabled", "k", "period_days", "k_min", "k_max", "restarts",
                                 "max_iters", "tol"},
                                ctx);
    detail::read_opt(*it, "enabled", c.clustering.enabled, ctx);
    detail::read_opt(*it, "k", c.clustering.k, ctx);
    detail::read_opt(*it, "period_days", c.clustering.period_days, ctx);
    detail::read_opt(*it, "k_min", c.k_min, ctx);
    detail::read_opt(*it, "k_max", c.k_max, ctx);
    detail::read_opt(*it, "restarts", c.clustering.kmeans.restarts, ctx);
    detail::read_opt(*it, "max_iters", c.clustering.kmeans.max_iters, ctx);
    detail::read_opt(*it, "tol", c.clustering.kmeans.tol, ctx);
  }
  detail::read_opt(j, "train_fraction", c.train_fraction, "config");
  detail::read_opt(j, "mape_floor", c.mape_floor, "config");
  detail::read_opt(j, "compare_unclustered", c.compare_unclustered, "config");
  if (auto it = j.find("weights"); it != j.end()) c.weights = resolve(it->get<std::string>());
  if (auto it = j.find("test_manifest"); it != j.end()) {
    c.test_manifest = resolve(it->get<std::string>());
  }
  detail::read_opt(j, "round_timeout_s", c.round_timeout_s, "config");
  detail::read_opt(j, "max_frame_bytes", c.max_frame_bytes, "config");
  std::string out = c.output_dir.string();
  detail::read_opt(j, "output_dir", out, "config");
  c.output_dir = resolve(out);

  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) {
    throw ConfigError("config.train_fraction must lie in (0, 1)");
  }
  if (c.clustering.k < 1) throw ConfigError("config.clustering.k must be >= 1");
  if (c.k_min < 1 || c.k_max < c.k_min) throw ConfigError("config.clustering: bad k range");
  if (!(c.mape_floor > 0.0)) throw ConfigError("config.mape_floor must be > 0");
  if (!(c.round_timeout_s > 0.0)) throw ConfigError("config.round_timeout_s must be > 0");
  for (const auto* p : {&c.manifest, &c.weights, &c.test_manifest}) {
    if (*p && !std::filesystem::exists(**p)) {
      throw ConfigError("referenced path does not exist: " + (*p)->string());
    }
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  return run_config_from_json(detail::load_json_file(path.string()), path.parent_path());
}

}  // namespace fedload
