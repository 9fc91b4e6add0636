#pragma once

// Edge-client role: HELLO with the daily-mean summary, then a strictly
// sequential loop of GLOBAL_WEIGHTS -> train_local -> LOCAL_WEIGHTS until
// SHUTDOWN. Only summaries and weights ever leave the process.

#include <chrono>
#include <optional>
#include <string>
#include <thread>

#include "fedload/data.hpp"
#include "fedload/error.hpp"
#include "fedload/federated.hpp"
#include "fedload/log.hpp"
#include "fedload/neural.hpp"
#include "fedload/protocol.hpp"
#include "fedload/socket.hpp"
#include "fedload/wire.hpp"

namespace fedload {

struct ClientOptions {
  std::string server;  // host:port
  std::string client_id;
  std::size_t connect_attempts = 3;
  std::chrono::milliseconds backoff{500};  // doubled after each failed attempt
  std::optional<std::size_t> summary_days;  // default: every whole day
  std::chrono::milliseconds idle_timeout{0};  // 0 waits indefinitely
  std::size_t max_frame_bytes = kDefaultMaxFrameBytes;
};

struct ClientResult {
  int cluster_id = -1;
  std::size_t rounds_trained = 0;
  std::vector<double> uploaded_summary;
};

inline net::Fd connect_with_retry(const ClientOptions& opts) {
  auto delay = opts.backoff;
  const std::size_t attempts = std::max<std::size_t>(opts.connect_attempts, 1);
  for (std::size_t a = 1;; ++a) {
    try {
      return net::connect_to(opts.server);
    } catch (const ProtocolError& e) {
      if (a >= attempts) {
        throw ProtocolError("giving up after " + std::to_string(a) + " attempts: " + e.what());
      }
      log::warn("connect attempt ", a, " failed: ", e.what(), "; retrying");
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
  }
}

inline ClientResult client_run(const ClientOptions& opts, ConsumptionSeries series) {
  if (opts.client_id.empty()) throw ConfigError("client: id required");
  series.building_id = opts.client_id;
  validate(series);

  ClientResult result;
  Hello hello{opts.client_id, {}};
  const std::size_t days =
      opts.summary_days ? *opts.summary_days : series.whole_days();
  if (days > series.whole_days()) {
    throw DataError(opts.client_id + ": summary needs " + std::to_string(days) + " days, only " +
                    std::to_string(series.whole_days()) + " available");
  }
  if (days > 0) hello.daily_means = consumption_summary(series, days).daily_means;
  result.uploaded_summary = hello.daily_means;

  net::Connection conn(connect_with_retry(opts), opts.max_frame_bytes);
  conn.send(MessageType::hello, encode_hello(hello));

  auto next_frame = [&]() -> Frame {
    const auto deadline = opts.idle_timeout.count() > 0 ? net::Clock::now() + opts.idle_timeout
                                                        : net::Clock::time_point::max();
    auto f = conn.receive(deadline);
    if (!f) throw ProtocolError(opts.client_id + ": timed out waiting for server");
    if (f->type == MessageType::error) {
      throw ProtocolError("server error: " + decode_text(f->payload), opts.client_id);
    }
    return std::move(*f);
  };

  std::optional<Assignment> assignment;
  WindowedDataset train;
  for (;;) {
    Frame f = next_frame();
    switch (f.type) {
      case MessageType::assign: {
        assignment = decode_assign(f.payload);
        result.cluster_id = assignment->cluster_id;
        auto split = prepare_client(series, assignment->arch.lookback, assignment->arch.horizon,
                                    assignment->train_fraction);
        train = std::move(split.train);
        if (train.empty()) {
          conn.send(MessageType::error, encode_text(opts.client_id + ": empty train set"));
          throw DataError(opts.client_id + ": empty train set");
        }
        log::info(opts.client_id, ": assigned to cluster ", result.cluster_id, ", ", train.size(),
                  " train samples");
        break;
      }
      case MessageType::global_weights: {
        if (!assignment) throw ProtocolError("GLOBAL_WEIGHTS before ASSIGN", opts.client_id);
        const DecodedWeights global = deserialize_weights(f.payload);
        if (global.arch != assignment->arch) {
          throw ProtocolError("global weights do not match assigned arch", opts.client_id);
        }
        LocalTrainStats stats;
        const ModelParams local =
            train_local(global.params, global.arch, train,
                        local_config(assignment->hp, assignment->cluster_id, global.round,
                                     opts.client_id),
                        &stats);
        conn.send(MessageType::local_weights,
                  encode_local_weights(train.size(), stats.mean_loss, local, global.arch,
                                       global.round + 1));
        ++result.rounds_trained;
        break;
      }
      case MessageType::round_done:
        break;
      case MessageType::shutdown:
        log::info(opts.client_id, ": shutdown after ", result.rounds_trained, " rounds");
        return result;
      default:
        throw ProtocolError("unexpected " + std::string(to_string(f.type)) + " from server",
                            opts.client_id);
    }
  }
}

}  // namespace fedload
