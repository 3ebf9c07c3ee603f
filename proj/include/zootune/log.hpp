#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>

namespace zootune {

enum class LogLevel { quiet = 0, info = 1, debug = 2 };

// Level comes from ZOOTUNE_LOG (quiet|info|debug); default info. Unknown
// values fall back to info rather than failing a run over a log knob.
inline LogLevel log_level() {
  static LogLevel lvl = [] {
    const char* e = std::getenv("ZOOTUNE_LOG");
    if (e == nullptr) return LogLevel::info;
    std::string s(e);
    if (s == "quiet") return LogLevel::quiet;
    if (s == "debug") return LogLevel::debug;
    return LogLevel::info;
  }();
  return lvl;
}

inline void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info) std::fprintf(stderr, "%s\n", msg.c_str());
}

inline void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::debug) std::fprintf(stderr, "%s\n", msg.c_str());
}

}  // namespace zootune
