#pragma once

// Control-message payloads (HELLO, ASSIGN) and JSON forms of the model
// architecture and training hyperparameters. Doubles survive the JSON
// round trip exactly, so clients reproduce the server's training config
// bit for bit.

#include <cstdint>
#include <string>
#include <vector>

#include "fedload/error.hpp"
#include "fedload/federated.hpp"
#include "fedload/json_util.hpp"
#include "fedload/params.hpp"
#include "fedload/wire.hpp"

namespace fedload {

inline json to_json(const ModelArch& a) {
  return {{"cell", std::string(to_string(a.cell))},
          {"input_dim", a.input_dim},
          {"hidden_dim", a.hidden_dim},
          {"lookback", a.lookback},
          {"horizon", a.horizon}};
}

inline ModelArch arch_from_json(const json& j) {
  detail::reject_unknown_keys(j, {"cell", "input_dim", "hidden_dim", "lookback", "horizon"},
                              "arch");
  ModelArch a;
  std::string cell = std::string(to_string(a.cell));
  detail::read_opt(j, "cell", cell, "arch");
  a.cell = parse_cell(cell);
  detail::read_opt(j, "input_dim", a.input_dim, "arch");
  detail::read_opt(j, "hidden_dim", a.hidden_dim, "arch");
  detail::read_opt(j, "lookback", a.lookback, "arch");
  detail::read_opt(j, "horizon", a.horizon, "arch");
  a.validate();
  return a;
}

inline std::string_view to_string(LossKind k) { return k == LossKind::mse ? "mse" : "ew_mse"; }

inline LossKind parse_loss(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "ew_mse" || s == "ew-mse") return LossKind::ew_mse;
  throw ConfigError("unknown loss '" + s + "'");
}

inline json to_json(const HyperParams& hp) {
  return {{"clients_per_round", hp.clients_per_round},
          {"learning_rate", hp.learning_rate},
          {"batch_size", hp.batch_size},
          {"local_epochs", hp.local_epochs},
          {"rounds", hp.rounds},
          {"loss", std::string(to_string(hp.loss.kind))},
          {"beta", hp.loss.beta},
          {"seed", hp.seed},
          {"weighted_aggregation", hp.weighted_aggregation},
          {"threads", hp.threads}};
}

inline HyperParams hyper_from_json(const json& j) {
  detail::reject_unknown_keys(j,
                              {"clients_per_round", "learning_rate", "batch_size",
                               "local_epochs", "rounds", "loss", "beta", "seed",
                               "weighted_aggregation", "threads"},
                              "hyper");
  HyperParams hp;
  const char* ctx = "hyper";
  detail::read_opt(j, "clients_per_round", hp.clients_per_round, ctx);
  detail::read_opt(j, "learning_rate", hp.learning_rate, ctx);
  detail::read_opt(j, "batch_size", hp.batch_size, ctx);
  detail::read_opt(j, "local_epochs", hp.local_epochs, ctx);
  detail::read_opt(j, "rounds", hp.rounds, ctx);
  std::string loss = std::string(to_string(hp.loss.kind));
  detail::read_opt(j, "loss", loss, ctx);
  hp.loss.kind = parse_loss(loss);
  detail::read_opt(j, "beta", hp.loss.beta, ctx);
  if (hp.loss.kind == LossKind::mse) hp.loss.beta = 1.0;
  detail::read_opt(j, "seed", hp.seed, ctx);
  detail::read_opt(j, "weighted_aggregation", hp.weighted_aggregation, ctx);
  detail::read_opt(j, "threads", hp.threads, ctx);
  hp.validate();
  return hp;
}

// HELLO: client id plus daily-mean kWh for the client's whole days (the
// server truncates to its summary period). No interval-level data.
struct Hello {
  std::string client_id;
  std::vector<double> daily_means;
};

inline Bytes encode_hello(const Hello& h) {
  return encode_json({{"client_id", h.client_id}, {"daily_means", h.daily_means}});
}

inline Hello decode_hello(std::span<const std::uint8_t> payload) {
  const json j = decode_json(payload);
  Hello h;
  try {
    h.client_id = j.at("client_id").get<std::string>();
    h.daily_means = j.value("daily_means", std::vector<double>{});
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed HELLO: ") + e.what());
  }
  if (h.client_id.empty()) throw ProtocolError("HELLO without client id");
  return h;
}

// ASSIGN: cluster membership plus everything the client needs to prepare
// its data and run ClientUpdate.
struct Assignment {
  int cluster_id = 0;
  ModelArch arch;
  HyperParams hp;
  double train_fraction = 0.75;
};

inline Bytes encode_assign(const Assignment& a) {
  return encode_json({{"cluster_id", a.cluster_id},
                      {"arch", to_json(a.arch)},
                      {"hyper", to_json(a.hp)},
                      {"train_fraction", a.train_fraction}});
}

inline Assignment decode_assign(std::span<const std::uint8_t> payload) {
  const json j = decode_json(payload);
  Assignment a;
  try {
    a.cluster_id = j.at("cluster_id").get<int>();
    a.arch = arch_from_json(j.at("arch"));
    a.hp = hyper_from_json(j.at("hyper"));
    a.train_fraction = j.at("train_fraction").get<double>();
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed ASSIGN: ") + e.what());
  } catch (const ConfigError& e) {
    throw ProtocolError(std::string("malformed ASSIGN: ") + e.what());
  }
  return a;
}

}  // namespace fedload
