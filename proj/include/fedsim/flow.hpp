#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsim/compression.hpp"
#include "fedsim/dataset.hpp"
#include "fedsim/hetero.hpp"
#include "fedsim/model.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/scheduler.hpp"
#include "fedsim/tracking.hpp"

namespace fedsim {

// Server -> client transfer of one round's model.
struct Packet {
  ClientId client_id;
  CompressedUpdate payload;
  std::uint64_t bytes = 0;
};

// Everything a client needs to execute its part of the round.
struct ClientContext {
  ClientId client_id;
  std::uint32_t round = 0;
  const Model* model = nullptr;
  std::span<const Sample> train;
  std::span<const Sample> test;
  TrainOptions options;
};

// Client -> server upload.
struct ClientUpdate {
  ClientId client_id;
  CompressedUpdate payload;
  std::uint32_t num_samples = 0;
  double train_loss = 0.0;
  std::uint64_t bytes = 0;
};

struct WeightedUpdate {
  ParamVector params;
  double weight = 0.0;  // n_k
};

// Server half of the training flow, in execution order:
// selection -> compression -> distribution -> ... -> decompression -> aggregation.
// An empty std::function means "use the default".
struct ServerStages {
  std::function<std::vector<ClientId>(std::span<const ClientId> available, std::size_t k, Rng& rng)> selection;
  std::function<CompressedUpdate(const ParamVector& global)> compression;
  std::function<std::vector<Packet>(const CompressedUpdate& payload, std::span<const ClientId> selected)> distribution;
  std::function<ParamVector(const CompressedUpdate& upload, const ParamVector& reference)> decompression;
  std::function<ParamVector(std::span<const WeightedUpdate> updates)> aggregation;
};

// Client half: download -> decompression -> train (or test) -> compression
// -> encryption -> upload.
struct ClientStages {
  std::function<CompressedUpdate(const Packet& packet)> download;
  std::function<ParamVector(const CompressedUpdate& payload)> decompression;
  std::function<TrainResult(const ParamVector& params, const ClientContext& ctx)> train;
  std::function<Evaluation(const ParamVector& params, const ClientContext& ctx)> test;
  std::function<CompressedUpdate(const ParamVector& trained, const ParamVector& received)> compression;
  std::function<CompressedUpdate(CompressedUpdate update)> encryption;
  std::function<ClientUpdate(CompressedUpdate update, const ClientContext& ctx, const TrainResult& result)> upload;
};

// Uniform sample of k ids without replacement, in draw order.
std::vector<ClientId> select_clients(std::span<const ClientId> available, std::size_t k, Rng& rng);

// sum(n_k * w_k) / sum(n_k) accumulated in f64, rounded once to f32.
// Throws kLayoutMismatch, kInvalidArgument (empty input or weight <= 0).
ParamVector aggregate(std::span<const WeightedUpdate> updates);

// Defaults. Server compression is the identity (a sparsified full model is
// not a usable download); `upload` governs the client compression stage,
// which sends top-k deltas against the received model when sparsifying.
ServerStages default_server_stages();
ClientStages default_client_stages(const CompressionSpec& upload);

ServerStages resolve(const ServerStages& overrides, const ServerStages& defaults);
ClientStages resolve(const ClientStages& overrides, const ClientStages& defaults);

// download -> decompression -> train -> compression -> encryption -> upload.
ClientUpdate run_client_pipeline(const ClientStages& stages, const Packet& packet, const ClientContext& ctx);

// Seed handed to a client's local training for a given round. Independent
// of executor and scheduling so every transport reproduces the same run.
std::uint64_t client_train_seed(std::uint64_t task_seed, std::uint32_t round, const ClientId& client);

struct ClientJob {
  Packet packet;
  TrainOptions options;
  std::uint32_t worker = 0;
};

struct ClientOutcome {
  ClientUpdate update;
  double time = 0.0;  // simulated seconds, or wall seconds for remote clients
  std::uint32_t worker = 0;
  std::uint64_t download_bytes = 0;
};

struct RoundPlan {
  std::uint32_t round = 0;
  std::vector<ClientJob> jobs;
  Allocation allocation;
};

// Transport executing the client half of a round. Implementations return
// outcomes for the clients that completed; missing clients were dropped.
class Executor {
 public:
  virtual ~Executor() = default;
  virtual std::vector<ClientOutcome> execute(const RoundPlan& plan, const ClientStages& stages) = 0;
  // Duration the server observes for the round. Default: the largest
  // per-worker sum of outcome times (workers run their clients in sequence).
  virtual double round_time(const RoundPlan& plan, const std::vector<ClientOutcome>& outcomes) const;
};

// In-process executor over a federated dataset with a simulated clock.
// One worker runs every client in sequence (standalone); more workers run
// each allocation group on its own thread (distributed).
class LocalExecutor final : public Executor {
 public:
  LocalExecutor(std::shared_ptr<const FederatedDataset> data, std::shared_ptr<const Model> model, HeteroSpec hetero,
                ProfileMap profiles, std::size_t workers);

  std::vector<ClientOutcome> execute(const RoundPlan& plan, const ClientStages& stages) override;

  const ProfileMap& profiles() const { return profiles_; }

 private:
  ClientOutcome run_one(const ClientJob& job, std::uint32_t round, const ClientStages& stages) const;

  std::shared_ptr<const FederatedDataset> data_;
  std::shared_ptr<const Model> model_;
  HeteroSpec hetero_;
  ProfileMap profiles_;
  std::size_t workers_;
};

struct FlowSettings {
  std::uint64_t seed = 0;
  std::uint32_t rounds = 10;
  std::optional<std::size_t> clients_per_round = 2;  // K
  std::optional<double> client_fraction;             // C, used when K unset
  TrainOptions train;                                // seed is replaced per client and round
  std::uint32_t eval_interval = 1;
  std::size_t workers = 1;  // 0: one worker per selected client
  SchedulerKind scheduler = SchedulerKind::kGreedyAda;
  double scheduler_default_time = 1.0;
  double scheduler_momentum = 0.5;
  std::size_t min_clients = 1;
  std::string mode = "standalone";
  nlohmann::json config_snapshot = nlohmann::json::object();

  // K = clients_per_round, or max(1, round(C * available)), capped at available.
  std::size_t resolve_k(std::size_t available) const;
};

struct RoundOutcome {
  std::uint32_t round = 0;
  std::vector<ClientId> selected;
  Allocation allocation;
  std::vector<ClientOutcome> outcomes;  // sorted by client id
  ParamVector global;
  double round_time = 0.0;
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;
};

struct TaskReport {
  std::string task_id;
  ParamVector final_params;
  std::optional<double> final_accuracy;
  std::optional<double> final_loss;
  std::vector<std::pair<std::uint32_t, double>> accuracy_curve;
  std::vector<double> round_times;
  double t_total = 0.0;
  double t_round = 0.0;
  std::uint32_t rounds = 0;
};

// Owns the server-side state of one task and runs it round by round.
class FlowEngine {
 public:
  struct Hooks {
    // Ids that may be selected this round (sorted or not; sorted internally).
    std::function<std::vector<ClientId>()> available_clients;
    // Global evaluation of a model; nullopt skips evaluation.
    std::function<std::optional<Evaluation>(const ParamVector&)> evaluate;
  };

  FlowEngine(FlowSettings settings, ParamVector initial, ServerStages server, ClientStages client, Executor& executor,
             Hooks hooks, MetricsSink* sink);

  RoundOutcome run_round();
  // Runs the remaining rounds and writes task, round and client records.
  TaskReport run_task();

  const ParamVector& global() const { return global_; }
  const SchedulerState& scheduler_state() const { return sched_; }
  SchedulerState& scheduler_state() { return sched_; }
  void set_profiles(ProfileMap profiles) { sched_.profiles = std::move(profiles); }
  const std::string& task_id() const { return task_id_; }

 private:
  FlowSettings settings_;
  ParamVector global_;
  ServerStages server_;
  ClientStages client_;
  Executor& executor_;
  Hooks hooks_;
  MetricsSink* sink_;
  SchedulerState sched_;
  Rng selection_rng_;
  Rng scheduler_rng_;
  std::uint32_t next_round_ = 0;
  std::string task_id_;
};

}  // namespace fedsim
