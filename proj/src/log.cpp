#include "fedsim/log.hpp"

#include <atomic>
#include <cstdio>
#include <mutex>

namespace fedsim::log {

namespace {
std::atomic<int> g_level{0};
std::mutex g_mu;
}  // namespace

void set_level(int level) { g_level = level; }
int level() { return g_level; }

void write(int, const std::string& line) {
  std::lock_guard lock(g_mu);
  std::fprintf(stderr, "%s\n", line.c_str());
}

}  // namespace fedsim::log
