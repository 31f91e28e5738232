#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "fedsim/rng.hpp"
#include "fedsim/types.hpp"

namespace fedsim {

// A flat labeled pool, optionally carrying a pre-assigned owner per sample
// (realistic partitions).
struct SamplePool {
  std::vector<Sample> samples;
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;
  std::vector<ClientId> owners;  // empty, or one entry per sample
};

struct ClientShard {
  std::vector<Sample> train;
  std::vector<Sample> test;

  std::size_t size() const { return train.size() + test.size(); }
  bool operator==(const ClientShard&) const = default;
};

struct FederatedDataset {
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;
  std::map<ClientId, ClientShard> clients;

  std::vector<ClientId> client_ids() const;
  // Union of all client test splits, in client-id order.
  std::vector<Sample> global_test() const;
  std::vector<Sample> global_train() const;
  std::size_t total_samples() const;

  bool operator==(const FederatedDataset&) const = default;
};

struct SyntheticSpec {
  std::size_t num_classes = 2;
  std::size_t feature_dim = 2;
  std::size_t total_samples = 5000;
  // Distance between class means in units of the (unit) cluster std-dev.
  double separation = 4.0;
};

// Isotropic unit-variance Gaussian clusters, class-balanced (remainder to
// the lowest labels), shuffled. Deterministic under seed.
SamplePool generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

enum class PartitionScheme { kIid, kDirichlet, kClassPerClient, kRealistic };

struct PartitionSpec {
  PartitionScheme scheme = PartitionScheme::kIid;
  std::size_t num_clients = 100;
  double alpha = 0.5;                      // dirichlet
  std::size_t classes_per_client = 2;      // class_per_client
  std::optional<double> unbalanced_beta;   // Dir(beta) shard sizes when set
  std::uint64_t seed = 0;
  double test_fraction = 0.2;

  void validate(std::size_t num_classes) const;
};

// Width-padded client ids: client_id(3, 100) == "c003".
ClientId make_client_id(std::size_t index, std::size_t num_clients);

// Dirichlet(alpha, ..., alpha) draw of dimension n.
std::vector<double> sample_dirichlet(double alpha, std::size_t n, Rng& rng);

// Splits a pool across clients. Every sample lands in exactly one client;
// each client keeps floor(test_fraction * n) samples as local test data.
// Throws kInfeasiblePartition when the scheme cannot give every client at
// least one sample (Dirichlet schemes redraw up to 100 times first).
FederatedDataset partition(const SamplePool& pool, const PartitionSpec& spec);

// Flattens a federated dataset back into a pool, recording owners.
SamplePool flatten(const FederatedDataset& fd);

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

// Directory with manifest.json plus one binary shard per client
// (u32 count; per sample feature_dim x f32 then u16 label; little-endian).
// Train samples precede test samples in each shard.
void save_dataset(const FederatedDataset& fd, const std::filesystem::path& dir);
FederatedDataset load_dataset(const std::filesystem::path& dir);

// Reads only the manifest header (num_classes, feature_dim, client ids).
struct DatasetInfo {
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;
  std::vector<ClientId> client_ids;
};
DatasetInfo read_manifest(const std::filesystem::path& dir);

// Loads one client's shard. `path` is either the dataset directory or a
// shard file inside it.
ClientShard load_client_shard(const std::filesystem::path& path, const ClientId& id, DatasetInfo* info = nullptr);

}  // namespace fedsim
