#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedsim/bytes.hpp"
#include "fedsim/param_vector.hpp"

namespace fedsim {

struct CompressionSpec {
  enum class Kind { kIdentity, kTopK };
  Kind kind = Kind::kIdentity;
  double ratio = 1.0;  // topk only, 0 < ratio <= 1

  static CompressionSpec identity() { return {}; }
  static CompressionSpec topk(double ratio) { return {Kind::kTopK, ratio}; }
  void validate() const;  // throws kRatioOutOfRange
};

// Either a dense copy of the values or a sorted (index, value) list over a
// dense vector of the given layout. `delta` marks values relative to a
// reference model the receiver already holds.
struct CompressedUpdate {
  Layout layout;
  bool sparse = false;
  bool delta = false;
  std::vector<std::uint32_t> indices;  // sparse only, strictly increasing
  std::vector<float> values;

  std::size_t dense_length() const { return layout_size(layout); }
  bool operator==(const CompressedUpdate&) const = default;
};

// identity: lossless dense copy. topk: keeps the ceil(ratio * n) values of
// largest magnitude (ties to the lower index) and drops the rest.
CompressedUpdate compress(const ParamVector& pv, const CompressionSpec& spec);
ParamVector decompress(const CompressedUpdate& update);

// Pass-through hook for client-side update encryption.
CompressedUpdate encrypt(CompressedUpdate update);

// u8 kind (0 dense, 1 sparse), u8 flags (bit 0: delta). Dense: a parameter
// vector encoding. Sparse: layout, u32 nnz, nnz x u32 index, nnz x f32 value.
void write_update(ByteWriter& w, const CompressedUpdate& u);
CompressedUpdate read_update(ByteReader& r);
Bytes encode_update(const CompressedUpdate& u);
CompressedUpdate decode_update(std::span<const std::uint8_t> bytes);

// Encoded size; the communication cost charged for moving the update.
std::uint64_t payload_bytes(const CompressedUpdate& u);

}  // namespace fedsim
