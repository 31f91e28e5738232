#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedsim/error.hpp"

namespace fedsim {

using Bytes = std::vector<std::uint8_t>;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

// Little-endian append-only writer.
class ByteWriter {
 public:
  explicit ByteWriter(Bytes& out) : out_(out) {}

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put_le(v); }
  void u32(std::uint32_t v) { put_le(v); }
  void u64(std::uint64_t v) { put_le(v); }
  void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }

  void raw(std::span<const std::uint8_t> data) { out_.insert(out_.end(), data.begin(), data.end()); }

  // u16 length prefix + UTF-8 bytes.
  void str16(std::string_view s) {
    if (s.size() > 0xFFFF) throw Error(ErrorCode::kInvalidArgument, "string exceeds 65535 bytes");
    u16(static_cast<std::uint16_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }

  // u32 length prefix + opaque bytes.
  void blob32(std::span<const std::uint8_t> data) {
    u32(static_cast<std::uint32_t>(data.size()));
    raw(data);
  }

  std::size_t size() const { return out_.size(); }

 private:
  template <typename T>
  void put_le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  Bytes& out_;
};

// Bounds-checked little-endian reader. Running past the end throws
// Error with the code given at construction.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in, ErrorCode underflow = ErrorCode::kMalformedPayload)
      : in_(in), underflow_(underflow) {}

  std::uint8_t u8() { return get_le<std::uint8_t>(); }
  std::uint16_t u16() { return get_le<std::uint16_t>(); }
  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  std::uint64_t u64() { return get_le<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }

  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::string str16() {
    auto n = u16();
    auto s = raw(n);
    return std::string(s.begin(), s.end());
  }

  Bytes blob32() {
    auto n = u32();
    auto s = raw(n);
    return Bytes(s.begin(), s.end());
  }

  std::size_t remaining() const { return in_.size() - pos_; }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) throw Error(underflow_, "unexpected end of data");
  }

  template <typename T>
  T get_le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(in_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  ErrorCode underflow_;
};

}  // namespace fedsim
