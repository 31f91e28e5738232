#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fedsim {

// Client ids are compared lexicographically wherever order matters
// (aggregation order, scheduler tie-breaks). Generated ids are zero-padded
// so that lexicographic and numeric order agree.
using ClientId = std::string;

struct Sample {
  std::vector<float> features;
  std::uint16_t label = 0;

  bool operator==(const Sample&) const = default;
};

}  // namespace fedsim
