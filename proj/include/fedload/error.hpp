#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedload {

// Error categories double as process exit codes for the CLI.
enum class ErrorKind : int {
  config = 1,
  data = 2,
  numeric = 3,
  protocol = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error(ErrorKind::config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

// Raised when an activation becomes NaN/Inf. `step` is the 1-based
// recurrence step, or lookback + 1 for the output head.
class NumericFault : public Error {
 public:
  NumericFault(std::size_t step, const std::string& what)
      : Error(ErrorKind::numeric,
              "numeric fault at step " + std::to_string(step) + ": " + what),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& what, std::string client = {})
      : Error(ErrorKind::protocol, what), client_(std::move(client)) {}

  // Client id the failure is attributed to, empty when unknown.
  const std::string& client() const noexcept { return client_; }

 private:
  std::string client_;
};

// Rethrows `e` with `prefix` prepended, keeping its concrete type where
// the constructor allows it.
[[noreturn]] inline void rethrow_prefixed(const Error& e, const std::string& prefix) {
  const std::string what = prefix + e.what();
  if (const auto* p = dynamic_cast<const ProtocolError*>(&e)) throw ProtocolError(what, p->client());
  switch (e.kind()) {
    case ErrorKind::config: throw ConfigError(what);
    case ErrorKind::data: throw DataError(what);
    default: throw Error(e.kind(), what);
  }
}

}  // namespace fedload
