#include "fedsim/compression.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedsim {

void CompressionSpec::validate() const {
  if (kind == Kind::kTopK && !(ratio > 0.0 && ratio <= 1.0)) {
    throw Error(ErrorCode::kRatioOutOfRange, "topk ratio must be in (0, 1], got " + std::to_string(ratio));
  }
}

CompressedUpdate compress(const ParamVector& pv, const CompressionSpec& spec) {
  spec.validate();
  CompressedUpdate out;
  out.layout = pv.layout();
  auto values = pv.values();
  if (spec.kind == CompressionSpec::Kind::kIdentity) {
    out.values.assign(values.begin(), values.end());
    return out;
  }

  const std::size_t n = values.size();
  // The epsilon keeps products like 0.1 * 30 from rounding up to 4.
  auto k = static_cast<std::size_t>(std::ceil(spec.ratio * static_cast<double>(n) - 1e-9));
  k = std::min(k, n);
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  auto by_magnitude = [&](std::uint32_t a, std::uint32_t b) {
    float ma = std::fabs(values[a]);
    float mb = std::fabs(values[b]);
    if (ma != mb) return ma > mb;
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), by_magnitude);
  order.resize(k);
  std::sort(order.begin(), order.end());

  out.sparse = true;
  out.indices = std::move(order);
  out.values.reserve(k);
  for (auto i : out.indices) out.values.push_back(values[i]);
  return out;
}

ParamVector decompress(const CompressedUpdate& u) {
  if (!u.sparse) return ParamVector(u.layout, u.values);
  auto dense = ParamVector::zeros(u.layout);
  auto v = dense.values();
  if (u.indices.size() != u.values.size()) throw Error(ErrorCode::kMalformedPayload, "sparse index/value mismatch");
  for (std::size_t i = 0; i < u.indices.size(); ++i) {
    if (u.indices[i] >= v.size()) throw Error(ErrorCode::kMalformedPayload, "sparse index out of range");
    v[u.indices[i]] = u.values[i];
  }
  return dense;
}

CompressedUpdate encrypt(CompressedUpdate update) { return update; }

void write_update(ByteWriter& w, const CompressedUpdate& u) {
  w.u8(u.sparse ? 1 : 0);
  w.u8(u.delta ? 1 : 0);
  if (!u.sparse) {
    write_params(w, ParamVector(u.layout, u.values));
    return;
  }
  write_layout(w, u.layout);
  w.u32(static_cast<std::uint32_t>(u.indices.size()));
  for (auto i : u.indices) w.u32(i);
  for (float v : u.values) w.f32(v);
}

CompressedUpdate read_update(ByteReader& r) {
  CompressedUpdate u;
  auto kind = r.u8();
  auto flags = r.u8();
  if (kind > 1) throw Error(ErrorCode::kMalformedPayload, "unknown update kind " + std::to_string(kind));
  if (flags & ~1u) throw Error(ErrorCode::kMalformedPayload, "unknown update flags");
  u.sparse = kind == 1;
  u.delta = (flags & 1u) != 0;
  if (!u.sparse) {
    auto pv = read_params(r);
    u.layout = pv.layout();
    u.values.assign(pv.values().begin(), pv.values().end());
    return u;
  }
  u.layout = read_layout(r);
  auto nnz = r.u32();
  const auto dense = layout_size(u.layout);
  if (nnz > dense) throw Error(ErrorCode::kMalformedPayload, "more sparse entries than dense length");
  if (static_cast<std::uint64_t>(nnz) * 8 > r.remaining()) throw Error(ErrorCode::kMalformedPayload, "sparse body truncated");
  u.indices.resize(nnz);
  for (std::uint32_t i = 0; i < nnz; ++i) {
    u.indices[i] = r.u32();
    if (u.indices[i] >= dense || (i > 0 && u.indices[i] <= u.indices[i - 1])) {
      throw Error(ErrorCode::kMalformedPayload, "sparse indices must be increasing and in range");
    }
  }
  u.values.resize(nnz);
  for (auto& v : u.values) v = r.f32();
  return u;
}

Bytes encode_update(const CompressedUpdate& u) {
  Bytes out;
  ByteWriter w(out);
  write_update(w, u);
  return out;
}

CompressedUpdate decode_update(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto u = read_update(r);
  if (!r.done()) throw Error(ErrorCode::kMalformedPayload, "trailing bytes after update");
  return u;
}

std::uint64_t payload_bytes(const CompressedUpdate& u) {
  std::uint64_t header = 2;
  std::uint64_t layout = 4;
  for (const auto& t : u.layout) layout += 2 + t.name.size() + 1 + 4 * t.dims.size();
  if (!u.sparse) return header + layout + 4 + 4 * u.values.size();
  return header + layout + 4 + 8 * u.values.size();
}

}  // namespace fedsim
