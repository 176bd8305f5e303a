#include "fata/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace fata {
namespace {

std::atomic<LogLevel> g_level{LogLevel::Warn};
std::mutex g_mutex;

void emit(std::string_view tag, std::string_view message) {
  std::lock_guard lock(g_mutex);
  std::cerr << tag << message << '\n';
}

}  // namespace

void set_log_level(LogLevel level) { g_level = level; }
LogLevel log_level() { return g_level; }

void log_warn(std::string_view message) {
  if (g_level >= LogLevel::Warn) emit("warning: ", message);
}

void log_info(std::string_view message) {
  if (g_level >= LogLevel::Info) emit("", message);
}

}  // namespace fata
