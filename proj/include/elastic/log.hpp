#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

namespace elastic::log {

enum class Level { quiet = 0, warn = 1, info = 2, debug = 3 };

// Level comes from EAVG_LOG (quiet|warn|info|debug), default warn.
inline Level level_from_env() {
  const char* env = std::getenv("EAVG_LOG");
  if (env == nullptr) return Level::warn;
  std::string_view v(env);
  if (v == "quiet") return Level::quiet;
  if (v == "info") return Level::info;
  if (v == "debug") return Level::debug;
  return Level::warn;
}

inline Level& current_level() {
  static Level level = level_from_env();
  return level;
}

inline void emit(Level at, std::string_view tag, const std::string& msg) {
  if (static_cast<int>(current_level()) < static_cast<int>(at)) return;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  std::clog << "[elastic " << tag << "] " << msg << '\n';
}

inline void warn(const std::string& msg) { emit(Level::warn, "warn", msg); }
inline void info(const std::string& msg) { emit(Level::info, "info", msg); }
inline void debug(const std::string& msg) { emit(Level::debug, "debug", msg); }

}  // namespace elastic::log
