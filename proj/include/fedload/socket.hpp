#pragma once

// Minimal blocking TCP over POSIX sockets with poll()-based deadlines.

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "fedload/error.hpp"
#include "fedload/wire.hpp"

namespace fedload::net {

using Clock = std::chrono::steady_clock;

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Fd() { reset(); }

  int get() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

struct HostPort {
  std::string host;
  std::uint16_t port = 0;
};

inline HostPort parse_host_port(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw ConfigError("expected <addr:port>, got '" + s + "'");
  HostPort hp;
  hp.host = s.substr(0, colon);
  if (hp.host.empty()) hp.host = "0.0.0.0";
  try {
    const long port = std::stol(s.substr(colon + 1));
    if (port < 0 || port > 65535) throw std::out_of_range("port");
    hp.port = static_cast<std::uint16_t>(port);
  } catch (const std::exception&) {
    throw ConfigError("bad port in '" + s + "'");
  }
  return hp;
}

inline sockaddr_in resolve_ipv4(const HostPort& hp) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(hp.port);
  if (::inet_pton(AF_INET, hp.host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(hp.host.c_str(), nullptr, &hints, &res) != 0 || !res) {
    throw ProtocolError("cannot resolve host '" + hp.host + "'");
  }
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return addr;
}

inline int remaining_ms(Clock::time_point deadline) {
  if (deadline == Clock::time_point::max()) return -1;
  const auto left =
      std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return left <= 0 ? 0 : static_cast<int>(std::min<long long>(left, 1 << 30));
}

// One framed TCP connection.
class Connection {
 public:
  Connection() = default;
  explicit Connection(Fd fd, std::size_t max_frame = kDefaultMaxFrameBytes)
      : fd_(std::move(fd)), decoder_(max_frame) {
    int one = 1;
    ::setsockopt(fd_.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }

  int fd() const { return fd_.get(); }
  bool open() const { return fd_.valid(); }
  void close() { fd_.reset(); }

  void send(MessageType type, std::span<const std::uint8_t> payload = {}) {
    const Bytes frame = encode_frame(type, payload);
    std::size_t off = 0;
    while (off < frame.size()) {
      const ssize_t n = ::send(fd_.get(), frame.data() + off, frame.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(std::string("send failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  // A complete frame if one is already buffered.
  std::optional<Frame> poll_buffered() { return decoder_.next(); }

  // Reads whatever is available without blocking past one recv; returns
  // false on orderly shutdown by the peer.
  bool pump() {
    std::uint8_t buf[64 * 1024];
    for (;;) {
      const ssize_t n = ::recv(fd_.get(), buf, sizeof(buf), 0);
      if (n > 0) {
        decoder_.feed(std::span<const std::uint8_t>(buf, static_cast<std::size_t>(n)));
        return true;
      }
      if (n == 0) return false;
      if (errno == EINTR) continue;
      throw ProtocolError(std::string("recv failed: ") + std::strerror(errno));
    }
  }

  // Blocks until a frame arrives or the deadline passes (nullopt).
  std::optional<Frame> receive(Clock::time_point deadline = Clock::time_point::max()) {
    for (;;) {
      if (auto f = decoder_.next()) return f;
      pollfd p{fd_.get(), POLLIN, 0};
      const int rc = ::poll(&p, 1, remaining_ms(deadline));
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(std::string("poll failed: ") + std::strerror(errno));
      }
      if (rc == 0) return std::nullopt;
      if (!pump()) throw ProtocolError("connection closed by peer");
    }
  }

 private:
  Fd fd_;
  FrameDecoder decoder_;
};

class Listener {
 public:
  explicit Listener(const std::string& bind_addr, int backlog = 64) {
    const HostPort hp = parse_host_port(bind_addr);
    sockaddr_in addr = resolve_ipv4(hp);
    fd_ = Fd(::socket(AF_INET, SOCK_STREAM, 0));
    if (!fd_.valid()) throw ProtocolError("socket() failed");
    int one = 1;
    ::setsockopt(fd_.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(fd_.get(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      throw ProtocolError("cannot bind " + bind_addr + ": " + std::strerror(errno));
    }
    if (::listen(fd_.get(), backlog) != 0) {
      throw ProtocolError(std::string("listen failed: ") + std::strerror(errno));
    }
    socklen_t len = sizeof(addr);
    ::getsockname(fd_.get(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }

  int fd() const { return fd_.get(); }
  std::uint16_t port() const { return port_; }

  Fd accept() {
    for (;;) {
      const int c = ::accept(fd_.get(), nullptr, nullptr);
      if (c >= 0) return Fd(c);
      if (errno == EINTR) continue;
      throw ProtocolError(std::string("accept failed: ") + std::strerror(errno));
    }
  }

 private:
  Fd fd_;
  std::uint16_t port_ = 0;
};

inline Fd connect_to(const std::string& address) {
  const HostPort hp = parse_host_port(address);
  sockaddr_in addr = resolve_ipv4(hp);
  Fd fd(::socket(AF_INET, SOCK_STREAM, 0));
  if (!fd.valid()) throw ProtocolError("socket() failed");
  if (::connect(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    throw ProtocolError("cannot connect to " + address + ": " + std::strerror(errno));
  }
  return fd;
}

}  // namespace fedload::net
