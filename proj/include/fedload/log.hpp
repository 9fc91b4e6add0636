#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <string_view>

#include "fedload/error.hpp"

namespace fedload::log {

enum class Level : int { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline std::atomic<int>& threshold() {
  static std::atomic<int> level{static_cast<int>(Level::info)};
  return level;
}

inline void set_level(Level level) { threshold() = static_cast<int>(level); }

inline Level parse_level(std::string_view s) {
  if (s == "debug") return Level::debug;
  if (s == "info") return Level::info;
  if (s == "warn" || s == "warning") return Level::warn;
  if (s == "error") return Level::error;
  if (s == "off" || s == "quiet") return Level::off;
  throw ConfigError("unknown log level '" + std::string(s) + "'");
}

inline bool enabled(Level level) {
  return static_cast<int>(level) >= threshold().load();
}

template <typename... Args>
void write(Level level, const Args&... args) {
  if (!enabled(level)) return;
  static constexpr const char* kTags[] = {"debug", "info", "warn", "error"};
  std::ostringstream oss;
  oss << "[" << kTags[static_cast<int>(level)] << "] ";
  (oss << ... << args);
  oss << '\n';
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << oss.str();
}

template <typename... Args>
void debug(const Args&... args) { write(Level::debug, args...); }
template <typename... Args>
void info(const Args&... args) { write(Level::info, args...); }
template <typename... Args>
void warn(const Args&... args) { write(Level::warn, args...); }
template <typename... Args>
void error(const Args&... args) { write(Level::error, args...); }

}  // namespace fedload::log
