// fedload: clustered federated load forecasting from the command line.
//
//   fedload synth    --config cfg.json
//   fedload cluster  --config cfg.json
//   fedload simulate --config cfg.json [--seed N] [--out DIR]
//   fedload serve    --config cfg.json --bind 0.0.0.0:7000 --expect 12
//   fedload client   --server host:7000 --id b001 --data b001.csv
//   fedload eval     --config cfg.json --weights w.flw --manifest m.json

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fedload/fedload.hpp"

namespace {

using namespace fedload;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string log_level = "info";
};

RunConfig load_config(const Globals& g) {
  RunConfig cfg = g.config.empty() ? RunConfig{} : load_run_config(g.config);
  if (g.seed) {
    cfg.hp.seed = *g.seed;
    if (cfg.generator) cfg.generator->seed = *g.seed;
  }
  if (!g.out.empty()) cfg.output_dir = g.out;
  return cfg;
}

void print_report_line(const EvalReport& r) {
  std::cout << r.population << ":";
  for (const auto& s : r.steps) {
    std::cout << "  " << s.minutes << "min acc " << s.accuracy << "%";
  }
  if (r.steps.empty()) std::cout << "  (no samples)";
  std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Clustered federated learning for short-term load forecasting"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON run config")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override every seed in the config");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--log-level", g.log_level, "debug, info, warn, error or off");

  auto* synth = app.add_subcommand("synth", "Write a synthetic population as CSVs + manifest");
  auto* cluster = app.add_subcommand("cluster", "Fit k-means on summaries; write model + elbow");
  auto* simulate = app.add_subcommand("simulate", "In-process federated training + evaluation");

  auto* serve = app.add_subcommand("serve", "Run the federated server over TCP");
  std::string bind = "127.0.0.1:7000";
  std::size_t expect = 0;
  serve->add_option("--bind", bind, "host:port to listen on");
  serve->add_option("--expect", expect, "Number of clients to wait for")->required();

  auto* client = app.add_subcommand("client", "Run one edge client over TCP");
  ClientOptions copts;
  std::string data;
  std::optional<std::size_t> period_days;
  client->add_option("--server", copts.server, "host:port of the server")->required();
  client->add_option("--id", copts.client_id, "Client id")->required();
  client->add_option("--data", data, "Consumption CSV")->required()->check(CLI::ExistingFile);
  client->add_option("--period-days", period_days, "Days to summarize (default: all)");
  client->add_option("--attempts", copts.connect_attempts, "Connect attempts");

  auto* eval = app.add_subcommand("eval", "Evaluate a weights blob without training");
  std::string weights, manifest;
  eval->add_option("--weights", weights, "Weights blob (.flw)")->check(CLI::ExistingFile);
  eval->add_option("--manifest", manifest, "Test manifest")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : static_cast<int>(ErrorKind::config);
  }

  try {
    log::set_level(log::parse_level(g.log_level));
    if (*client) {
      copts.summary_days = period_days;
      if (!g.config.empty()) copts.max_frame_bytes = load_config(g).max_frame_bytes;
      const ClientResult r = cmd_client(copts, data);
      std::cout << copts.client_id << ": cluster " << r.cluster_id << ", " << r.rounds_trained
                << " rounds\n";
      return 0;
    }

    RunConfig cfg = load_config(g);
    if (*synth) {
      const Manifest m = cmd_synth(cfg);
      std::cout << "wrote " << m.entries.size() << " buildings to " << cfg.output_dir.string()
                << '\n';
    } else if (*cluster) {
      const ClusterDiagnostics d = cmd_cluster(cfg);
      std::cout << "k = " << d.model.k << ", inertia " << d.model.inertia << '\n';
    } else if (*simulate) {
      const SimulationResult r = cmd_simulate(cfg);
      for (const auto& f : r.flavors) print_report_line(f.heldout.overall);
      print_report_line(r.persistence_heldout);
    } else if (*serve) {
      const ServeResult r = cmd_serve(cfg, bind, expect);
      std::cout << "trained " << r.states.size() << " model(s); " << r.rejected.size()
                << " connection(s) rejected\n";
    } else if (*eval) {
      if (!weights.empty()) cfg.weights = weights;
      if (!manifest.empty()) cfg.test_manifest = manifest;
      const EvalResult r = cmd_eval(cfg);
      print_report_line(r.model);
      print_report_line(r.persistence);
    }
    return 0;
  } catch (const Error& e) {
    log::error(e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    log::error(e.what());
    return static_cast<int>(ErrorKind::data);
  }
}
