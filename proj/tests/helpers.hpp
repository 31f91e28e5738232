#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "fedsim/error.hpp"
#include "fedsim/param_vector.hpp"
#include "fedsim/rng.hpp"

namespace fedsim::testing {

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("fedsim-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  operator const std::filesystem::path&() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline Layout small_layout() { return {{"w", {3, 2}}, {"b", {2}}}; }

inline ParamVector random_params(const Layout& layout, Rng& rng, float scale = 1.0f) {
  std::normal_distribution<float> nd(0.0f, scale);
  std::vector<float> v(layout_size(layout));
  for (auto& x : v) x = nd(rng);
  return ParamVector(layout, std::move(v));
}

// Runs f and returns the Error code it throws; fails the test if nothing is thrown.
template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  throw std::runtime_error("expected a fedsim::Error");
}

}  // namespace fedsim::testing
