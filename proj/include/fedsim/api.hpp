#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "fedsim/config.hpp"
#include "fedsim/flow.hpp"
#include "fedsim/remote.hpp"
#include "fedsim/tracking.hpp"

namespace fedsim {

using DatasetProvider = std::function<FederatedDataset(const Config&)>;
using RunCallback = std::function<void(const TaskReport&)>;

struct ServerArgs {
  std::string registry_addr;
  std::optional<std::string> tracking_addr;  // remote sink instead of the local store
  std::chrono::milliseconds wait_timeout{30000};
  std::chrono::milliseconds request_timeout{60000};
  bool stop_clients = true;  // send STOP to every listed client at the end
};

struct ClientArgs {
  ClientId client_id;
  std::string listen_addr = "127.0.0.1:0";
  std::string registry_addr;
  std::filesystem::path shard;  // dataset directory or shard file
  std::uint32_t ttl_s = remote::kDefaultTtl;
  int register_attempts = 5;
  std::chrono::milliseconds retry_delay{200};
  std::chrono::milliseconds train_delay{0};
};

// One configured platform instance: the init / register_* / run /
// start_server / start_client surface.
class Platform {
 public:
  // Validates the config. Throws kInvalidConfig, kDatasetNotFound.
  explicit Platform(Config config);

  const Config& config() const { return config_; }

  // Each slot takes one registrant, before the first run.
  // Throws kAlreadyRegistered, kRunInProgress.
  void register_dataset(DatasetProvider provider);
  void register_model(ModelFactory factory);
  void register_server(ServerStages stages);
  void register_client(ClientStages stages);

  // Standalone or distributed training. Throws kInvalidConfig for remote
  // mode, kTrainingDiverged, kWorkerFailure.
  TaskReport run(const RunCallback& callback = {});

  // Remote server: waits for clients in the registry, then drives the task
  // over the wire.
  TaskReport start_server(const ServerArgs& args, const RunCallback& callback = {});
  // Remote client: serves until STOP.
  void start_client(const ClientArgs& args);
  // Started client service for callers that manage its lifetime.
  std::unique_ptr<remote::ClientService> launch_client(const ClientArgs& args);

  // Lazily built simulation environment.
  const FederatedDataset& dataset();
  std::shared_ptr<const Model> model(std::size_t feature_dim, std::size_t num_classes);
  const ProfileMap& profiles();

  // Seeds of the derived streams.
  std::uint64_t partition_seed() const;
  std::uint64_t synthetic_seed() const;
  std::uint64_t model_seed() const;
  std::uint64_t profile_seed() const;

 private:
  void check_open(const char* slot, bool filled) const;
  FlowSettings flow_settings(RunMode mode) const;
  ClientStages client_stages() const;
  std::unique_ptr<MetricsSink> make_sink(const std::optional<std::string>& remote_addr) const;
  std::pair<std::size_t, std::size_t> dims();

  Config config_;
  DatasetProvider dataset_provider_;
  ModelFactory model_factory_;
  std::optional<ServerStages> server_stages_;
  std::optional<ClientStages> client_stages_;
  bool started_ = false;

  std::shared_ptr<const FederatedDataset> dataset_;
  std::optional<ProfileMap> profiles_;
};

// The synthetic pool and partition a config describes, without running.
FederatedDataset build_dataset(const Config& config);

}  // namespace fedsim
