#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "fedsim/compression.hpp"
#include "fedsim/dataset.hpp"
#include "fedsim/hetero.hpp"
#include "fedsim/model.hpp"
#include "fedsim/scheduler.hpp"

namespace fedsim {

enum class RunMode { kStandalone, kDistributed, kRemote };

std::string_view to_string(RunMode mode);
std::string_view to_string(SchedulerKind kind);
std::string_view to_string(PartitionScheme scheme);

// Either a synthetic pool partitioned per `partition`, or a saved federated
// dataset directory used verbatim (the realistic scheme).
struct DatasetSource {
  std::optional<std::filesystem::path> path;
  SyntheticSpec synthetic;
};

struct Config {
  std::uint64_t seed = 0;
  std::uint32_t rounds = 10;
  std::optional<std::size_t> clients_per_round = 2;
  std::optional<double> client_fraction;
  std::uint32_t local_epochs = 1;
  std::uint32_t batch_size = 32;
  double learning_rate = 0.1;
  double momentum = 0.9;
  ModelKind model = ModelKind::kLogReg;
  std::size_t hidden_dim = 16;
  DatasetSource dataset;
  PartitionSpec partition;
  HeteroSpec hetero;
  std::size_t workers = 1;
  SchedulerKind scheduler = SchedulerKind::kGreedyAda;
  double scheduler_default_time = 1.0;
  double scheduler_momentum = 0.5;
  RunMode mode = RunMode::kStandalone;
  std::string tracking_dir = "fedsim-tracking";  // empty disables local tracking
  CompressionSpec compression;
  std::uint32_t eval_interval = 1;
  std::size_t min_clients = 1;

  // Throws kInvalidConfig.
  void validate() const;

  // Unknown keys are rejected. Missing keys keep their defaults.
  static Config from_json(const nlohmann::json& j);
  static Config load(const std::filesystem::path& file);
  // Applies the keys present in `j` on top of this config.
  void merge(const nlohmann::json& j);
  nlohmann::json to_json() const;

  ModelSpec model_spec(std::size_t feature_dim, std::size_t num_classes) const;
  TrainOptions train_options() const;
};

}  // namespace fedsim
