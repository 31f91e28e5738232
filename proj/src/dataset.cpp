#include "fedsim/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "fedsim/bytes.hpp"
#include "fedsim/error.hpp"

namespace fedsim {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kMaxRedraws = 100;

// Splits `total` into integer parts proportional to `weights`
// (largest-remainder rounding, ties to the lower index).
std::vector<std::size_t> apportion(std::size_t total, std::span<const double> weights) {
  double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> out(weights.size());
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    double exact = static_cast<double>(total) * weights[i] / wsum;
    out[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += out[i];
    rema.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) out[rema[k % rema.size()].second] += 1;
  return out;
}

// Dir(beta) weights over clients when shards are unbalanced; nullopt means equal.
std::optional<std::vector<double>> draw_size_weights(const PartitionSpec& spec, Rng& rng) {
  if (!spec.unbalanced_beta) return std::nullopt;
  return sample_dirichlet(*spec.unbalanced_beta, spec.num_clients, rng);
}

// Shard sizes fixed before any content is assigned: one sample per client,
// the rest split by the drawn weights.
std::vector<std::size_t> sizes_from_weights(std::size_t pool_size, std::size_t clients, std::span<const double> w) {
  if (pool_size < clients) {
    throw Error(ErrorCode::kInfeasiblePartition, std::to_string(pool_size) + " samples cannot fill " +
                                                     std::to_string(clients) + " clients");
  }
  auto sizes = apportion(pool_size - clients, w);
  for (auto& s : sizes) s += 1;
  return sizes;
}

std::vector<std::vector<std::size_t>> assign_iid(const SamplePool& pool, const PartitionSpec& spec, Rng& rng) {
  std::vector<std::size_t> idx(pool.samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  auto weights = draw_size_weights(spec, rng);
  std::vector<std::vector<std::size_t>> owned(spec.num_clients);
  if (!weights) {
    for (std::size_t i = 0; i < idx.size(); ++i) owned[i % spec.num_clients].push_back(idx[i]);
    return owned;
  }
  auto sizes = sizes_from_weights(idx.size(), spec.num_clients, *weights);
  std::size_t pos = 0;
  for (std::size_t j = 0; j < spec.num_clients; ++j) {
    owned[j].assign(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                    idx.begin() + static_cast<std::ptrdiff_t>(pos + sizes[j]));
    pos += sizes[j];
  }
  return owned;
}

std::vector<std::vector<std::size_t>> indices_by_class(const SamplePool& pool) {
  std::vector<std::vector<std::size_t>> by_class(pool.num_classes);
  for (std::size_t i = 0; i < pool.samples.size(); ++i) by_class[pool.samples[i].label].push_back(i);
  return by_class;
}

// Unbalanced dirichlet: each client fills its quota following its own
// Dir(alpha) label mix, restricted to classes that still have samples.
std::vector<std::vector<std::size_t>> fill_quotas(std::vector<std::vector<std::size_t>> by_class,
                                                  const PartitionSpec& spec, std::span<const std::size_t> sizes,
                                                  Rng& rng) {
  const std::size_t classes = by_class.size();
  std::vector<std::size_t> order(spec.num_clients);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> owned(spec.num_clients);
  for (std::size_t j : order) {
    auto mix = sample_dirichlet(spec.alpha, classes, rng);
    std::size_t need = sizes[j];
    while (need > 0) {
      std::vector<double> w(classes, 0.0);
      double mass = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        if (!by_class[c].empty()) mass += (w[c] = mix[c]);
      }
      if (mass <= 0.0) {
        for (std::size_t c = 0; c < classes; ++c) w[c] = static_cast<double>(by_class[c].size());
      }
      auto want = apportion(need, w);
      for (std::size_t c = 0; c < classes; ++c) {
        std::size_t take = std::min(want[c], by_class[c].size());
        auto& src = by_class[c];
        owned[j].insert(owned[j].end(), src.end() - static_cast<std::ptrdiff_t>(take), src.end());
        src.resize(src.size() - take);
        need -= take;
      }
    }
  }
  return owned;
}

// Per class, proportions over clients ~ Dir(alpha); each class is cut at the
// cumulative proportions.
std::vector<std::vector<std::size_t>> assign_dirichlet(const SamplePool& pool, const PartitionSpec& spec, Rng& rng) {
  auto by_class = indices_by_class(pool);
  for (auto& c : by_class) std::shuffle(c.begin(), c.end(), rng);
  if (auto weights = draw_size_weights(spec, rng)) {
    auto sizes = sizes_from_weights(pool.samples.size(), spec.num_clients, *weights);
    return fill_quotas(std::move(by_class), spec, sizes, rng);
  }

  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    std::vector<std::vector<std::size_t>> owned(spec.num_clients);
    for (const auto& members : by_class) {
      auto p = sample_dirichlet(spec.alpha, spec.num_clients, rng);
      double cum = 0.0;
      std::size_t begin = 0;
      for (std::size_t j = 0; j < spec.num_clients; ++j) {
        cum += p[j];
        std::size_t end = j + 1 == spec.num_clients
                              ? members.size()
                              : std::min(members.size(), static_cast<std::size_t>(cum * static_cast<double>(members.size())));
        end = std::max(end, begin);
        owned[j].insert(owned[j].end(), members.begin() + static_cast<std::ptrdiff_t>(begin),
                        members.begin() + static_cast<std::ptrdiff_t>(end));
        begin = end;
      }
    }
    if (std::all_of(owned.begin(), owned.end(), [](const auto& o) { return !o.empty(); })) return owned;
  }
  throw Error(ErrorCode::kInfeasiblePartition, "dirichlet draw left a client empty after 100 redraws");
}

// Client j holds labels (j*n + k) mod C for k < n; each class is split among
// its holders (equally, or by size weight when unbalanced).
std::vector<std::vector<std::size_t>> assign_class_per_client(const SamplePool& pool, const PartitionSpec& spec,
                                                              Rng& rng) {
  const std::size_t classes = pool.num_classes;
  const std::size_t n = std::min(spec.classes_per_client, classes);
  if (spec.num_clients * n < classes) {
    throw Error(ErrorCode::kInfeasiblePartition, std::to_string(spec.num_clients) + " clients x " + std::to_string(n) +
                                                     " labels cannot cover " + std::to_string(classes) + " classes");
  }
  std::vector<std::vector<std::size_t>> holders(classes);
  for (std::size_t j = 0; j < spec.num_clients; ++j) {
    for (std::size_t k = 0; k < n; ++k) holders[(j * n + k) % classes].push_back(j);
  }
  auto by_class = indices_by_class(pool);
  for (std::size_t c = 0; c < classes; ++c) {
    if (by_class[c].size() < holders[c].size()) {
      throw Error(ErrorCode::kInfeasiblePartition, "class " + std::to_string(c) + " has " +
                                                       std::to_string(by_class[c].size()) + " samples for " +
                                                       std::to_string(holders[c].size()) + " label slots");
    }
    std::shuffle(by_class[c].begin(), by_class[c].end(), rng);
  }
  auto weights = draw_size_weights(spec, rng);

  std::vector<std::vector<std::size_t>> owned(spec.num_clients);
  for (std::size_t c = 0; c < classes; ++c) {
    const auto& hs = holders[c];
    const auto& members = by_class[c];
    // Every slot gets one sample up front; the rest follows the weights.
    std::vector<double> w(hs.size(), 1.0);
    if (weights) {
      for (std::size_t i = 0; i < hs.size(); ++i) w[i] = (*weights)[hs[i]];
    }
    auto extra = apportion(members.size() - hs.size(), w);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < hs.size(); ++i) {
      std::size_t take = 1 + extra[i];
      auto& dst = owned[hs[i]];
      dst.insert(dst.end(), members.begin() + static_cast<std::ptrdiff_t>(pos),
                 members.begin() + static_cast<std::ptrdiff_t>(pos + take));
      pos += take;
    }
  }
  return owned;
}

std::vector<std::vector<std::size_t>> assign_realistic(const SamplePool& pool,
                                                       std::vector<ClientId>& ids) {
  if (pool.owners.size() != pool.samples.size()) {
    throw Error(ErrorCode::kInvalidArgument, "realistic partition requires an owner for every sample");
  }
  std::map<ClientId, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < pool.samples.size(); ++i) groups[pool.owners[i]].push_back(i);
  std::vector<std::vector<std::size_t>> owned;
  for (auto& [id, members] : groups) {
    ids.push_back(id);
    owned.push_back(std::move(members));
  }
  return owned;
}

void write_file(const fs::path& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kStorageIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error(ErrorCode::kStorageIo, "short write to " + path.string());
}

Bytes read_file(const fs::path& path, ErrorCode missing) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(missing, "cannot read " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

bool safe_file_name(const std::string& name) {
  return !name.empty() && name != "." && name != ".." && name.find('/') == std::string::npos &&
         name.find('\\') == std::string::npos && name.find('\0') == std::string::npos;
}

struct ManifestEntry {
  ClientId id;
  std::string shard;
  std::size_t num_samples = 0;
  std::size_t num_train = 0;
};

struct Manifest {
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;
  std::vector<ManifestEntry> entries;
};

Manifest parse_manifest(const fs::path& dir) {
  auto path = dir / "manifest.json";
  if (!fs::exists(path)) throw Error(ErrorCode::kDatasetNotFound, "no manifest.json in " + dir.string());
  auto raw = read_file(path, ErrorCode::kMalformedManifest);
  Manifest m;
  try {
    auto j = json::parse(raw.begin(), raw.end());
    auto version = j.at("format_version").get<std::int64_t>();
    if (version != kDatasetFormatVersion) {
      throw Error(ErrorCode::kUnknownFormatVersion, "format_version " + std::to_string(version));
    }
    m.num_classes = j.at("num_classes").get<std::size_t>();
    m.feature_dim = j.at("feature_dim").get<std::size_t>();
    if (m.num_classes == 0 || m.feature_dim == 0) {
      throw Error(ErrorCode::kMalformedManifest, "num_classes and feature_dim must be positive");
    }
    std::set<ClientId> seen;
    for (const auto& c : j.at("clients")) {
      ManifestEntry e;
      e.id = c.at("id").get<std::string>();
      e.shard = c.at("shard").get<std::string>();
      e.num_samples = c.at("num_samples").get<std::size_t>();
      e.num_train = c.at("num_train").get<std::size_t>();
      if (!safe_file_name(e.shard)) throw Error(ErrorCode::kMalformedManifest, "bad shard name '" + e.shard + "'");
      if (e.num_train == 0 || e.num_train > e.num_samples) {
        throw Error(ErrorCode::kMalformedManifest, "client '" + e.id + "' has inconsistent sample counts");
      }
      if (!seen.insert(e.id).second) throw Error(ErrorCode::kMalformedManifest, "duplicate client '" + e.id + "'");
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kMalformedManifest, ex.what());
  }
  return m;
}

ClientShard read_shard(const fs::path& dir, const ManifestEntry& e, const Manifest& m) {
  auto path = dir / e.shard;
  if (!fs::exists(path)) throw Error(ErrorCode::kMalformedManifest, "client '" + e.id + "' shard missing: " + e.shard);
  auto raw = read_file(path, ErrorCode::kMalformedManifest);
  ByteReader r(raw, ErrorCode::kShapeMismatch);
  auto count = r.u32();
  if (count != e.num_samples) {
    throw Error(ErrorCode::kMalformedManifest, "shard " + e.shard + " holds " + std::to_string(count) +
                                                   " samples, manifest says " + std::to_string(e.num_samples));
  }
  const std::size_t record = m.feature_dim * 4 + 2;
  if (r.remaining() != record * count) {
    throw Error(ErrorCode::kShapeMismatch, "shard " + e.shard + " size does not match feature_dim " +
                                               std::to_string(m.feature_dim));
  }
  ClientShard shard;
  shard.train.reserve(e.num_train);
  shard.test.reserve(count - e.num_train);
  for (std::uint32_t i = 0; i < count; ++i) {
    Sample s;
    s.features.resize(m.feature_dim);
    for (auto& f : s.features) f = r.f32();
    s.label = r.u16();
    if (s.label >= m.num_classes) throw Error(ErrorCode::kMalformedManifest, "label out of range in " + e.shard);
    (i < e.num_train ? shard.train : shard.test).push_back(std::move(s));
  }
  return shard;
}

}  // namespace

std::vector<ClientId> FederatedDataset::client_ids() const {
  std::vector<ClientId> ids;
  for (const auto& [id, _] : clients) ids.push_back(id);
  return ids;
}

std::vector<Sample> FederatedDataset::global_test() const {
  std::vector<Sample> out;
  for (const auto& [_, shard] : clients) out.insert(out.end(), shard.test.begin(), shard.test.end());
  return out;
}

std::vector<Sample> FederatedDataset::global_train() const {
  std::vector<Sample> out;
  for (const auto& [_, shard] : clients) out.insert(out.end(), shard.train.begin(), shard.train.end());
  return out;
}

std::size_t FederatedDataset::total_samples() const {
  std::size_t n = 0;
  for (const auto& [_, shard] : clients) n += shard.size();
  return n;
}

SamplePool generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.num_classes == 0 || spec.feature_dim == 0 || spec.total_samples == 0) {
    throw Error(ErrorCode::kInvalidArgument, "synthetic pool dimensions must be positive");
  }
  if (spec.num_classes > 0xFFFF) throw Error(ErrorCode::kInvalidArgument, "too many classes");
  auto rng = make_rng(seed, {hash_string("synthetic")});
  std::normal_distribution<double> normal(0.0, 1.0);

  // Means at separation/sqrt(2) along distinct axes give pairwise distance
  // `separation`; with more classes than axes, use random directions.
  const double radius = spec.separation / std::sqrt(2.0);
  std::vector<std::vector<double>> means(spec.num_classes, std::vector<double>(spec.feature_dim, 0.0));
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    if (spec.num_classes <= spec.feature_dim) {
      means[c][c] = radius;
    } else {
      double norm = 0.0;
      for (auto& v : means[c]) {
        v = normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (auto& v : means[c]) v *= radius / (norm > 0 ? norm : 1.0);
    }
  }

  SamplePool pool;
  pool.num_classes = spec.num_classes;
  pool.feature_dim = spec.feature_dim;
  pool.samples.reserve(spec.total_samples);
  const std::size_t base = spec.total_samples / spec.num_classes;
  const std::size_t extra = spec.total_samples % spec.num_classes;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    std::size_t count = base + (c < extra ? 1 : 0);
    for (std::size_t i = 0; i < count; ++i) {
      Sample s;
      s.label = static_cast<std::uint16_t>(c);
      s.features.resize(spec.feature_dim);
      for (std::size_t k = 0; k < spec.feature_dim; ++k) s.features[k] = static_cast<float>(means[c][k] + normal(rng));
      pool.samples.push_back(std::move(s));
    }
  }
  std::shuffle(pool.samples.begin(), pool.samples.end(), rng);
  return pool;
}

void PartitionSpec::validate(std::size_t num_classes) const {
  if (num_clients == 0) throw Error(ErrorCode::kInvalidConfig, "num_clients must be positive");
  if (scheme == PartitionScheme::kDirichlet && !(alpha > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "dirichlet alpha must be > 0");
  }
  if (scheme == PartitionScheme::kClassPerClient && (classes_per_client == 0 || classes_per_client > num_classes)) {
    throw Error(ErrorCode::kInvalidConfig, "classes_per_client must be in [1, num_classes]");
  }
  if (unbalanced_beta && !(*unbalanced_beta > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "unbalanced beta must be > 0");
  }
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "test_fraction must be in [0, 1)");
  }
}

ClientId make_client_id(std::size_t index, std::size_t num_clients) {
  std::size_t width = std::to_string(num_clients > 0 ? num_clients - 1 : 0).size();
  width = std::max<std::size_t>(width, 3);
  auto digits = std::to_string(index);
  return "c" + std::string(width > digits.size() ? width - digits.size() : 0, '0') + digits;
}

std::vector<double> sample_dirichlet(double alpha, std::size_t n, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(n);
  for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
    double sum = 0.0;
    for (auto& v : p) {
      v = gamma(rng);
      sum += v;
    }
    if (sum > 0.0 && std::isfinite(sum)) {
      for (auto& v : p) v /= sum;
      return p;
    }
  }
  // Every gamma draw underflowed (alpha extremely small): the limit is one-hot.
  std::fill(p.begin(), p.end(), 0.0);
  p[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = 1.0;
  return p;
}

FederatedDataset partition(const SamplePool& pool, const PartitionSpec& spec) {
  if (pool.samples.empty()) throw Error(ErrorCode::kInvalidArgument, "cannot partition an empty pool");
  spec.validate(pool.num_classes);
  for (const auto& s : pool.samples) {
    if (s.features.size() != pool.feature_dim) throw Error(ErrorCode::kShapeMismatch, "non-uniform feature length");
    if (s.label >= pool.num_classes) throw Error(ErrorCode::kInvalidArgument, "label out of range");
  }
  if (spec.scheme != PartitionScheme::kRealistic && spec.num_clients > pool.samples.size()) {
    throw Error(ErrorCode::kInfeasiblePartition, "more clients than samples");
  }

  auto rng = make_rng(spec.seed, {hash_string("partition")});
  std::vector<ClientId> ids;
  std::vector<std::vector<std::size_t>> owned;
  switch (spec.scheme) {
    case PartitionScheme::kIid: owned = assign_iid(pool, spec, rng); break;
    case PartitionScheme::kDirichlet: owned = assign_dirichlet(pool, spec, rng); break;
    case PartitionScheme::kClassPerClient: owned = assign_class_per_client(pool, spec, rng); break;
    case PartitionScheme::kRealistic: owned = assign_realistic(pool, ids); break;
  }
  if (ids.empty()) {
    for (std::size_t j = 0; j < owned.size(); ++j) ids.push_back(make_client_id(j, owned.size()));
  }

  FederatedDataset fd;
  fd.num_classes = pool.num_classes;
  fd.feature_dim = pool.feature_dim;
  for (std::size_t j = 0; j < owned.size(); ++j) {
    auto& members = owned[j];
    if (members.empty()) throw Error(ErrorCode::kInfeasiblePartition, "client " + ids[j] + " received no samples");
    std::shuffle(members.begin(), members.end(), rng);
    auto n_test = static_cast<std::size_t>(std::floor(spec.test_fraction * static_cast<double>(members.size())));
    n_test = std::min(n_test, members.size() - 1);
    ClientShard shard;
    std::size_t n_train = members.size() - n_test;
    for (std::size_t i = 0; i < members.size(); ++i) {
      (i < n_train ? shard.train : shard.test).push_back(pool.samples[members[i]]);
    }
    fd.clients.emplace(ids[j], std::move(shard));
  }
  return fd;
}

SamplePool flatten(const FederatedDataset& fd) {
  SamplePool pool;
  pool.num_classes = fd.num_classes;
  pool.feature_dim = fd.feature_dim;
  for (const auto& [id, shard] : fd.clients) {
    for (const auto* part : {&shard.train, &shard.test}) {
      for (const auto& s : *part) {
        pool.samples.push_back(s);
        pool.owners.push_back(id);
      }
    }
  }
  return pool;
}

void save_dataset(const FederatedDataset& fd, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kStorageIo, "cannot create " + dir.string() + ": " + ec.message());

  json clients = json::array();
  for (const auto& [id, shard] : fd.clients) {
    auto file = id + ".bin";
    if (!safe_file_name(file)) throw Error(ErrorCode::kInvalidArgument, "client id '" + id + "' is not a file name");
    if (shard.train.empty()) throw Error(ErrorCode::kInvalidArgument, "client '" + id + "' has no train samples");
    Bytes out;
    ByteWriter w(out);
    w.u32(static_cast<std::uint32_t>(shard.size()));
    for (const auto* part : {&shard.train, &shard.test}) {
      for (const auto& s : *part) {
        if (s.features.size() != fd.feature_dim) throw Error(ErrorCode::kShapeMismatch, "sample length mismatch");
        for (float f : s.features) w.f32(f);
        w.u16(s.label);
      }
    }
    write_file(dir / file, out);
    clients.push_back({{"id", id}, {"shard", file}, {"num_samples", shard.size()}, {"num_train", shard.train.size()}});
  }
  json manifest = {{"format_version", kDatasetFormatVersion},
                   {"num_classes", fd.num_classes},
                   {"feature_dim", fd.feature_dim},
                   {"clients", clients}};
  auto text = manifest.dump(2) + "\n";
  write_file(dir / "manifest.json",
             std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

FederatedDataset load_dataset(const fs::path& dir) {
  auto m = parse_manifest(dir);
  FederatedDataset fd;
  fd.num_classes = m.num_classes;
  fd.feature_dim = m.feature_dim;
  for (const auto& e : m.entries) fd.clients.emplace(e.id, read_shard(dir, e, m));
  return fd;
}

DatasetInfo read_manifest(const fs::path& dir) {
  auto m = parse_manifest(dir);
  DatasetInfo info{m.num_classes, m.feature_dim, {}};
  for (const auto& e : m.entries) info.client_ids.push_back(e.id);
  return info;
}

ClientShard load_client_shard(const fs::path& path, const ClientId& id, DatasetInfo* info) {
  bool is_dir = fs::is_directory(path);
  fs::path dir = is_dir ? path : path.parent_path();
  auto m = parse_manifest(dir.empty() ? fs::path(".") : dir);
  for (const auto& e : m.entries) {
    bool match = is_dir ? e.id == id : e.shard == path.filename().string();
    if (!match) continue;
    if (info) *info = DatasetInfo{m.num_classes, m.feature_dim, {e.id}};
    return read_shard(dir, e, m);
  }
  throw Error(ErrorCode::kUnknownClient, "no shard for client '" + id + "' in " + dir.string());
}

}  // namespace fedsim
