#pragma once

#include <sstream>
#include <string>

namespace fedsim::log {

// 0 warnings only, 1 info (-v), 2 debug (-vv). Output goes to stderr.
void set_level(int level);
int level();
void write(int level, const std::string& line);

template <typename... Args>
void emit(int lvl, const char* tag, const Args&... args) {
  if (lvl > level()) return;
  std::ostringstream os;
  os << tag;
  (os << ... << args);
  write(lvl, os.str());
}

template <typename... Args>
void warn(const Args&... args) { emit(0, "warn: ", args...); }
template <typename... Args>
void info(const Args&... args) { emit(1, "info: ", args...); }
template <typename... Args>
void debug(const Args&... args) { emit(2, "debug: ", args...); }

}  // namespace fedsim::log
