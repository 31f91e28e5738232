#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedsim/bytes.hpp"

namespace fedsim {

struct TensorShape {
  std::string name;
  std::vector<std::uint32_t> dims;

  std::size_t numel() const;
  bool operator==(const TensorShape&) const = default;
};

using Layout = std::vector<TensorShape>;

std::size_t layout_size(const Layout& layout);

// Flat f32 parameter vector with a named-tensor layout describing how it
// is flattened. Houses both the global model and client updates.
class ParamVector {
 public:
  ParamVector() = default;
  // Throws kShapeMismatch if values.size() != layout_size(layout).
  ParamVector(Layout layout, std::vector<float> values);

  static ParamVector zeros(Layout layout);

  const Layout& layout() const { return layout_; }
  std::span<const float> values() const { return values_; }
  std::span<float> values() { return values_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  // View of one named tensor; throws kInvalidArgument if absent.
  std::span<const float> tensor(std::string_view name) const;

  bool same_layout(const ParamVector& other) const { return layout_ == other.layout_; }

 private:
  Layout layout_;
  std::vector<float> values_;
};

// Bitwise equality of layout and every value (distinguishes -0.0 and NaN payloads).
bool bit_identical(const ParamVector& a, const ParamVector& b);

// u32 entry count; per entry: u16 name length, name, u8 rank, rank x u32 dims;
// then u32 value count and count x f32. All little-endian.
void write_layout(ByteWriter& w, const Layout& layout);
Layout read_layout(ByteReader& r);
void write_params(ByteWriter& w, const ParamVector& pv);
ParamVector read_params(ByteReader& r);

Bytes encode_params(const ParamVector& pv);
// Throws kMalformedPayload on truncated or inconsistent input, including
// trailing bytes.
ParamVector decode_params(std::span<const std::uint8_t> bytes);

}  // namespace fedsim
