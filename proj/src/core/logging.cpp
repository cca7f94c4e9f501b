#include "autoprosam/core/logging.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace aps::log {

namespace {
std::atomic<Level> g_level{Level::Warn};
std::mutex g_mutex;
constexpr const char* kTags[] = {"debug", "info", "warn", "error", "off"};
}  // namespace

void set_level(Level l) { g_level.store(l); }
Level level() { return g_level.load(); }

void write(Level l, std::string_view message) {
  if (l < g_level.load()) return;
  std::lock_guard lock(g_mutex);
  std::clog << '[' << kTags[static_cast<int>(l)] << "] " << message << '\n';
}

}  // namespace aps::log
