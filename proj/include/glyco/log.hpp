#pragma once

#include <cstdlib>
#include <iostream>
#include <string>

namespace glyco {

enum class LogLevel { error = 0, info = 1, debug = 2 };

inline LogLevel log_level() {
  static LogLevel level = [] {
    const char* env = std::getenv("GLYCO_LOG");
    if (!env) return LogLevel::info;
    std::string s(env);
    if (s == "error") return LogLevel::error;
    if (s == "debug") return LogLevel::debug;
    return LogLevel::info;
  }();
  return level;
}

inline void log_error(const std::string& msg) {
  std::cerr << "[glyco:error] " << msg << "\n";
}

inline void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info) std::cerr << "[glyco] " << msg << "\n";
}

inline void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::debug)
    std::cerr << "[glyco:debug] " << msg << "\n";
}

}  // namespace glyco
