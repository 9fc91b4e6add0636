#pragma once

// Networked FL server. Registers the expected clients (HELLO carries each
// client's daily-mean summary), optionally clusters them, then runs the
// same round schedule as the simulator with a synchronous barrier per
// round. Selection, seeding and reduction order match
// run_federated_training, so final weights are byte-identical.

#include <poll.h>

#include <algorithm>
#include <cmath>
#include <chrono>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedload/cluster.hpp"
#include "fedload/error.hpp"
#include "fedload/federated.hpp"
#include "fedload/log.hpp"
#include "fedload/protocol.hpp"
#include "fedload/socket.hpp"
#include "fedload/wire.hpp"

namespace fedload {

struct ClusteringOptions {
  bool enabled = false;
  int k = 4;
  std::size_t period_days = 273;
  KMeansOptions kmeans;
};

struct ServerOptions {
  ModelArch arch;
  HyperParams hp;
  ClusteringOptions clustering;
  double train_fraction = 0.75;
  std::chrono::milliseconds round_timeout{600'000};
  std::size_t max_frame_bytes = kDefaultMaxFrameBytes;
};

struct ServeResult {
  std::map<int, GlobalModelState<float>> states;
  std::optional<ClusterModel> clusters;
  std::vector<std::string> rejected;  // reasons for turned-away connections
};

class Server {
 public:
  Server(const std::string& bind_addr, std::size_t expected_clients, ServerOptions opts)
      : listener_(bind_addr), expected_(expected_clients), opts_(std::move(opts)) {
    if (expected_ < 1) throw ConfigError("serve: expected clients must be >= 1");
    opts_.arch.validate();
    opts_.hp.validate();
  }

  std::uint16_t port() const { return listener_.port(); }

  ServeResult run() {
    try {
      return run_impl();
    } catch (const Error& e) {
      broadcast_error(e.what());
      throw;
    }
  }

 private:
  struct Peer {
    std::string id;
    net::Connection conn;
    std::vector<double> daily_means;
  };

  net::Clock::time_point deadline() const { return net::Clock::now() + opts_.round_timeout; }

  void reject_connection(net::Fd fd, const std::string& why) {
    net::Connection c(std::move(fd), opts_.max_frame_bytes);
    try {
      c.send(MessageType::error, encode_text(why));
    } catch (const ProtocolError&) {
    }
    log::warn("rejected connection: ", why);
    result_.rejected.push_back(why);
  }

  void broadcast_error(const std::string& why) {
    for (auto& [id, p] : peers_) {
      if (!p.conn.open()) continue;
      try {
        p.conn.send(MessageType::error, encode_text(why));
      } catch (const ProtocolError&) {
      }
    }
  }

  // Empty string when the uploaded summary is usable.
  std::string summary_problem(const Hello& h) const {
    for (double v : h.daily_means) {
      if (!std::isfinite(v) || v < 0.0) return "uploaded a non-finite or negative daily mean";
    }
    if (opts_.clustering.enabled && h.daily_means.size() < opts_.clustering.period_days) {
      return "uploaded " + std::to_string(h.daily_means.size()) + " days, clustering needs " +
             std::to_string(opts_.clustering.period_days);
    }
    return {};
  }

  void register_clients() {
    std::vector<net::Connection> pending;
    const auto until = deadline();
    while (peers_.size() < expected_) {
      std::vector<pollfd> fds{{listener_.fd(), POLLIN, 0}};
      for (auto& c : pending) fds.push_back({c.fd(), POLLIN, 0});
      const int rc = ::poll(fds.data(), fds.size(), net::remaining_ms(until));
      if (rc < 0 && errno == EINTR) continue;
      if (rc == 0) {
        throw ProtocolError("timed out waiting for clients: " + std::to_string(peers_.size()) +
                            " of " + std::to_string(expected_) + " registered");
      }
      if (fds[0].revents & POLLIN) {
        pending.emplace_back(listener_.accept(), opts_.max_frame_bytes);
      }
      for (std::size_t i = 1; i < fds.size(); ++i) {
        if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
        auto& conn = pending[i - 1];
        try {
          if (!conn.pump()) {
            conn.close();
            continue;
          }
          auto frame = conn.poll_buffered();
          if (!frame) continue;
          if (frame->type != MessageType::hello) {
            throw ProtocolError("expected HELLO, got " + std::string(to_string(frame->type)));
          }
          Hello hello = decode_hello(frame->payload);
          if (peers_.count(hello.client_id)) {
            conn.send(MessageType::error, encode_text("duplicate client id '" + hello.client_id + "'"));
            result_.rejected.push_back("duplicate client id '" + hello.client_id + "'");
            log::warn("duplicate client id '", hello.client_id, "' rejected");
            conn.close();
            continue;
          }
          if (const auto bad = summary_problem(hello); !bad.empty()) {
            throw ProtocolError("client '" + hello.client_id + "' " + bad);
          }
          if (peers_.size() >= expected_) {
            conn.send(MessageType::error, encode_text("server full"));
            conn.close();
            continue;
          }
          log::info("client '", hello.client_id, "' registered");
          peers_.emplace(hello.client_id,
                         Peer{hello.client_id, std::move(conn), std::move(hello.daily_means)});
        } catch (const ProtocolError& e) {
          try {
            conn.send(MessageType::error, encode_text(e.what()));
          } catch (const ProtocolError&) {
          }
          result_.rejected.push_back(e.what());
          log::warn("handshake failed: ", e.what());
          conn.close();
        }
      }
      std::erase_if(pending, [](const net::Connection& c) { return !c.open(); });
    }
    // Anyone still mid-handshake is surplus.
    for (auto& c : pending) {
      try {
        c.send(MessageType::error, encode_text("server full"));
      } catch (const ProtocolError&) {
      }
    }
  }

  std::map<int, std::vector<std::string>> form_clusters() {
    std::vector<std::string> ids;
    for (const auto& [id, p] : peers_) ids.push_back(id);
    if (!opts_.clustering.enabled) return cluster_members(ids, nullptr);
    std::vector<SummaryVector> summaries;
    for (const auto& [id, p] : peers_) {
      if (p.daily_means.size() < opts_.clustering.period_days) {
        throw DataError("client '" + id + "' uploaded " + std::to_string(p.daily_means.size()) +
                        " days, clustering needs " +
                        std::to_string(opts_.clustering.period_days));
      }
      summaries.push_back(
          {id, std::vector<double>(p.daily_means.begin(),
                                   p.daily_means.begin() +
                                       static_cast<std::ptrdiff_t>(opts_.clustering.period_days))});
    }
    KMeansOptions km = opts_.clustering.kmeans;
    km.seed = opts_.hp.seed;
    result_.clusters = kmeans_fit(summaries, opts_.clustering.k, km);
    return cluster_members(ids, &*result_.clusters);
  }

  // Handles a connection attempt while training: always refused.
  void refuse_late_joiner() {
    reject_connection(listener_.accept(), "server full: expected " + std::to_string(expected_) +
                                              " clients already registered");
  }

  std::vector<LocalWeights> collect(const std::vector<std::string>& selected, std::size_t round) {
    std::map<std::string, LocalWeights> got;
    const auto until = deadline();
    while (got.size() < selected.size()) {
      std::vector<pollfd> fds{{listener_.fd(), POLLIN, 0}};
      std::vector<Peer*> waiting;
      for (const auto& id : selected) {
        if (got.count(id)) continue;
        Peer& p = peers_.at(id);
        // Frames may already be buffered from an earlier read.
        if (auto f = p.conn.poll_buffered()) {
          accept_local(p, std::move(*f), round, got);
          continue;
        }
        waiting.push_back(&p);
        fds.push_back({p.conn.fd(), POLLIN, 0});
      }
      if (waiting.empty()) break;
      const int rc = ::poll(fds.data(), fds.size(), net::remaining_ms(until));
      if (rc < 0 && errno == EINTR) continue;
      if (rc == 0) {
        std::string missing;
        for (auto* p : waiting) missing += (missing.empty() ? "" : ", ") + p->id;
        throw ProtocolError("round " + std::to_string(round + 1) + " timed out waiting for " + missing,
                            waiting.front()->id);
      }
      if (fds[0].revents & POLLIN) refuse_late_joiner();
      for (std::size_t i = 1; i < fds.size(); ++i) {
        if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
        Peer& p = *waiting[i - 1];
        bool alive = true;
        try {
          alive = p.conn.pump();
        } catch (const ProtocolError& e) {
          throw ProtocolError("client '" + p.id + "': " + e.what(), p.id);
        }
        if (!alive) {
          p.conn.close();
          throw ProtocolError("client '" + p.id + "' disconnected during round " +
                                  std::to_string(round + 1),
                              p.id);
        }
        std::optional<Frame> f;
        try {
          f = p.conn.poll_buffered();
        } catch (const ProtocolError& e) {
          throw ProtocolError("client '" + p.id + "': " + e.what(), p.id);
        }
        if (f) accept_local(p, std::move(*f), round, got);
      }
    }
    std::vector<LocalWeights> out;
    for (const auto& id : selected) out.push_back(std::move(got.at(id)));
    return out;
  }

  void accept_local(Peer& p, Frame f, std::size_t round, std::map<std::string, LocalWeights>& got) {
    if (f.type == MessageType::error) {
      throw ProtocolError("client '" + p.id + "' reported: " + decode_text(f.payload), p.id);
    }
    if (f.type != MessageType::local_weights) {
      throw ProtocolError("client '" + p.id + "' sent unexpected " + std::string(to_string(f.type)),
                          p.id);
    }
    LocalWeights lw;
    try {
      lw = decode_local_weights(f.payload);
    } catch (const ProtocolError& e) {
      throw ProtocolError("client '" + p.id + "': " + e.what(), p.id);
    }
    if (lw.weights.arch != opts_.arch || lw.weights.round != round + 1) {
      throw ProtocolError("client '" + p.id + "' returned weights for the wrong arch or round", p.id);
    }
    got[p.id] = std::move(lw);
  }

  ServeResult run_impl() {
    register_clients();
    const auto clusters = form_clusters();
    for (const auto& [cid, members] : clusters) {
      for (const auto& id : members) {
        peers_.at(id).conn.send(MessageType::assign,
                                encode_assign({cid, opts_.arch, opts_.hp, opts_.train_fraction}));
      }
    }

    const HyperParams& hp = opts_.hp;
    const ModelParams w0 = init_params<float>(opts_.arch, init_seed(hp.seed));
    for (const auto& [cid, members] : clusters) {
      GlobalModelState<float> st{cid, 0, w0, {}};
      for (std::size_t t = 0; members.size() > 0 && t < hp.rounds; ++t) {
        const auto selected =
            select_clients(members, hp.per_round(members.size()), t, hp.seed, cid);
        const Bytes blob = serialize_weights(st.params, opts_.arch, static_cast<std::uint32_t>(t));
        for (const auto& id : selected) {
          try {
            peers_.at(id).conn.send(MessageType::global_weights, blob);
          } catch (const ProtocolError& e) {
            throw ProtocolError("client '" + id + "': " + e.what(), id);
          }
        }
        auto locals = collect(selected, t);
        std::vector<ModelParams> params;
        std::vector<double> weights;
        RoundRecord rec;
        rec.round = t + 1;
        rec.selected = selected;
        for (auto& lw : locals) {
          params.push_back(std::move(lw.weights.params));
          if (hp.weighted_aggregation) weights.push_back(static_cast<double>(lw.n_samples));
          rec.mean_local_loss += lw.mean_loss;
        }
        rec.mean_local_loss /= static_cast<double>(locals.size());
        st.params = fedavg_aggregate(params, weights);
        st.history.push_back(std::move(rec));
        st.round = t + 1;
        for (const auto& id : selected) {
          peers_.at(id).conn.send(MessageType::round_done, encode_u32(static_cast<std::uint32_t>(t + 1)));
        }
        log::info("cluster ", cid, " round ", t + 1, "/", hp.rounds, " loss ",
                  st.history.back().mean_local_loss);
      }
      result_.states.emplace(cid, std::move(st));
    }
    for (auto& [id, p] : peers_) p.conn.send(MessageType::shutdown);
    return std::move(result_);
  }

  net::Listener listener_;
  std::size_t expected_;
  ServerOptions opts_;
  std::map<std::string, Peer> peers_;
  ServeResult result_;
};

}  // namespace fedload
