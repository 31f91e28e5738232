#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedsim/types.hpp"

namespace fedsim {

enum class TrackLevel : std::uint8_t { kTask = 0, kRound = 1, kClient = 2 };

std::string_view to_string(TrackLevel level);
TrackLevel parse_track_level(std::string_view s);

struct TaskMetrics {
  std::string task_id;
  nlohmann::json config = nlohmann::json::object();
  std::string mode;
  std::uint32_t rounds = 0;
  std::int64_t start_ms = 0;
  std::int64_t end_ms = 0;
  double t_total = 0.0;  // simulated seconds in standalone/distributed, wall seconds in remote
  double t_round = 0.0;  // t_total / rounds
  double wall_time_s = 0.0;
  std::optional<double> final_accuracy;
  std::optional<double> final_loss;
  bool finished = false;
};

struct RoundMetrics {
  std::string task_id;
  std::uint32_t round = 0;
  std::optional<double> accuracy;
  std::optional<double> loss;
  double round_time = 0.0;  // simulated seconds (wall seconds in remote mode)
  double wall_time_s = 0.0;
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;
  std::vector<ClientId> selected;
  std::int64_t timestamp_ms = 0;
};

struct ClientMetrics {
  std::string task_id;
  std::uint32_t round = 0;
  ClientId client_id;
  double train_loss = 0.0;
  std::uint32_t num_samples = 0;
  double train_time = 0.0;
  std::uint64_t upload_bytes = 0;
  std::uint64_t download_bytes = 0;
  std::optional<std::uint32_t> worker;
};

void to_json(nlohmann::json& j, const TaskMetrics& m);
void from_json(const nlohmann::json& j, TaskMetrics& m);
void to_json(nlohmann::json& j, const RoundMetrics& m);
void from_json(const nlohmann::json& j, RoundMetrics& m);
void to_json(nlohmann::json& j, const ClientMetrics& m);
void from_json(const nlohmann::json& j, ClientMetrics& m);

// T_total / R in f64.
double round_time_average(double t_total, std::uint32_t rounds);

std::int64_t unix_millis();
std::string make_task_id();  // random UUID v4

// Destination for the three record levels. Task records may be written
// more than once; the latest write wins (start, then finish).
class MetricsSink {
 public:
  virtual ~MetricsSink() = default;
  virtual void record(const TaskMetrics& m) = 0;
  virtual void record(const RoundMetrics& m) = 0;
  virtual void record(const ClientMetrics& m) = 0;
};

struct QueryFilter {
  std::optional<std::uint32_t> round_eq;
  std::optional<std::uint32_t> round_lt;
  std::optional<ClientId> client_id;
};

// Append-only local store: <root>/<task_id>/{task.json, rounds.jsonl, clients.jsonl}.
// Thread-safe; records are flushed before record() returns.
class TrackingStore final : public MetricsSink {
 public:
  explicit TrackingStore(std::filesystem::path root);

  void record(const TaskMetrics& m) override;
  void record(const RoundMetrics& m) override;
  void record(const ClientMetrics& m) override;

  // Matching records in insertion order. Throws kTaskNotFound.
  std::vector<nlohmann::json> query(const std::string& task_id, TrackLevel level, const QueryFilter& filter = {}) const;

  std::vector<std::string> task_ids() const;
  const std::filesystem::path& root() const { return root_; }

 private:
  struct TaskIndex {
    std::set<std::uint32_t> rounds;
  };

  std::filesystem::path task_dir(const std::string& task_id) const;
  TaskIndex& index_for(const std::string& task_id);  // requires mu_

  std::filesystem::path root_;
  mutable std::mutex mu_;
  std::map<std::string, TaskIndex> index_;
};

}  // namespace fedsim
