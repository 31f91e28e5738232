#include "fedsim/param_vector.hpp"

#include <algorithm>
#include <bit>
#include <limits>

namespace fedsim {

namespace {

// Upper bound on elements a decoded layout may describe; keeps hostile
// input from requesting absurd allocations.
constexpr std::uint64_t kMaxDecodedElements = 1ULL << 28;

}  // namespace

std::size_t TensorShape::numel() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::size_t layout_size(const Layout& layout) {
  std::size_t total = 0;
  for (const auto& t : layout) total += t.numel();
  return total;
}

ParamVector::ParamVector(Layout layout, std::vector<float> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (values_.size() != layout_size(layout_)) {
    throw Error(ErrorCode::kShapeMismatch, "value count " + std::to_string(values_.size()) +
                                               " does not match layout size " +
                                               std::to_string(layout_size(layout_)));
  }
}

ParamVector ParamVector::zeros(Layout layout) {
  auto n = layout_size(layout);
  return ParamVector(std::move(layout), std::vector<float>(n, 0.0f));
}

std::span<const float> ParamVector::tensor(std::string_view name) const {
  std::size_t offset = 0;
  for (const auto& t : layout_) {
    if (t.name == name) return std::span<const float>(values_).subspan(offset, t.numel());
    offset += t.numel();
  }
  throw Error(ErrorCode::kInvalidArgument, "no tensor named '" + std::string(name) + "'");
}

bool bit_identical(const ParamVector& a, const ParamVector& b) {
  if (a.layout() != b.layout() || a.size() != b.size()) return false;
  auto va = a.values();
  auto vb = b.values();
  return std::equal(va.begin(), va.end(), vb.begin(), [](float x, float y) {
    return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
  });
}

void write_layout(ByteWriter& w, const Layout& layout) {
  w.u32(static_cast<std::uint32_t>(layout.size()));
  for (const auto& t : layout) {
    w.str16(t.name);
    if (t.dims.size() > 0xFF) throw Error(ErrorCode::kInvalidArgument, "tensor rank exceeds 255");
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
  }
}

Layout read_layout(ByteReader& r) {
  auto count = r.u32();
  // Each entry occupies at least 3 bytes.
  if (static_cast<std::uint64_t>(count) * 3 > r.remaining()) {
    throw Error(ErrorCode::kMalformedPayload, "layout entry count exceeds payload");
  }
  Layout layout;
  layout.reserve(count);
  std::uint64_t total = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorShape t;
    t.name = r.str16();
    auto rank = r.u8();
    std::uint64_t numel = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      auto d = r.u32();
      t.dims.push_back(d);
      numel *= d;
      if (numel > kMaxDecodedElements) throw Error(ErrorCode::kMalformedPayload, "tensor too large");
    }
    total += numel;
    if (total > kMaxDecodedElements) throw Error(ErrorCode::kMalformedPayload, "layout too large");
    layout.push_back(std::move(t));
  }
  return layout;
}

void write_params(ByteWriter& w, const ParamVector& pv) {
  write_layout(w, pv.layout());
  w.u32(static_cast<std::uint32_t>(pv.size()));
  for (float v : pv.values()) w.f32(v);
}

ParamVector read_params(ByteReader& r) {
  auto layout = read_layout(r);
  auto count = r.u32();
  if (count != layout_size(layout)) {
    throw Error(ErrorCode::kMalformedPayload, "value count does not match layout");
  }
  if (static_cast<std::uint64_t>(count) * 4 > r.remaining()) {
    throw Error(ErrorCode::kMalformedPayload, "value array truncated");
  }
  std::vector<float> values(count);
  for (auto& v : values) v = r.f32();
  return ParamVector(std::move(layout), std::move(values));
}

Bytes encode_params(const ParamVector& pv) {
  Bytes out;
  ByteWriter w(out);
  write_params(w, pv);
  return out;
}

ParamVector decode_params(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto pv = read_params(r);
  if (!r.done()) throw Error(ErrorCode::kMalformedPayload, "trailing bytes after parameter vector");
  return pv;
}

}  // namespace fedsim
