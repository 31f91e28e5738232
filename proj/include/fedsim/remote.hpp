#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fedsim/flow.hpp"
#include "fedsim/net.hpp"
#include "fedsim/protocol.hpp"
#include "fedsim/tracking.hpp"

namespace fedsim::remote {

using net::Millis;
using SteadyClock = std::function<std::chrono::steady_clock::time_point()>;

inline constexpr std::uint32_t kDefaultTtl = 30;

// client_id -> (addr, expiry). Expired entries are dropped when next seen.
class RegistryTable {
 public:
  explicit RegistryTable(std::uint32_t default_ttl_s = kDefaultTtl, SteadyClock clock = {});

  // Returns the granted ttl (the default when ttl_s is 0).
  std::uint32_t upsert(const ClientId& id, const std::string& addr, std::uint32_t ttl_s);
  // False when the id is unknown or already expired.
  bool renew(const ClientId& id);
  bool remove(const ClientId& id);
  // Unexpired entries sorted by id.
  std::vector<proto::ClientEntry> live();

  proto::Message handle(const proto::Message& request);

 private:
  struct Entry {
    std::string addr;
    std::uint32_t ttl_s;
    std::chrono::steady_clock::time_point expiry;
  };

  std::uint32_t default_ttl_;
  SteadyClock clock_;
  std::mutex mu_;
  std::map<ClientId, Entry> entries_;
};

class RegistryServer {
 public:
  explicit RegistryServer(const std::string& addr, std::uint32_t default_ttl_s = kDefaultTtl, SteadyClock clock = {});

  std::string address() const { return server_->address(); }
  RegistryTable& table() { return table_; }
  void stop() { server_->stop(); }

 private:
  RegistryTable table_;
  std::unique_ptr<net::Server> server_;
};

// Registry client calls.
std::vector<proto::ClientEntry> list_clients(const std::string& registry, Millis timeout);

struct ClientOptions {
  ClientId client_id;
  std::string listen_addr = "127.0.0.1:0";
  std::string registry_addr;
  std::uint32_t ttl_s = kDefaultTtl;
  std::optional<Millis> heartbeat_interval;  // ttl / 3 when unset
  int register_attempts = 5;
  Millis retry_delay{200};
  Millis call_timeout{2000};
  Millis train_delay{0};  // extra latency per training request, for fault tests
};

// Serves TRAIN / TEST requests for one shard through the client stages.
class ClientService {
 public:
  ClientService(ClientOptions options, ClientShard shard, std::shared_ptr<const Model> model, ClientStages stages);
  ~ClientService();

  // Binds, registers (bounded retries) and starts heartbeating.
  // Throws kBindFailure, kRegistryUnreachable.
  void start();
  // Blocks until STOP arrives or stop()/kill() is called.
  void wait();
  // Deregisters and closes.
  void stop();
  // Drops off the network without deregistering, as a crash would.
  void kill();

  std::string address() const;
  const ClientId& id() const { return options_.client_id; }

 private:
  std::optional<proto::Message> handle(const proto::Message& request);
  proto::Message train(const proto::TrainRequest& req);
  proto::Message test(const proto::TestRequest& req);
  void register_self();
  void heartbeat_loop(std::stop_token st);
  void shutdown(bool deregister);

  ClientOptions options_;
  ClientShard shard_;
  std::shared_ptr<const Model> model_;
  ClientStages stages_;
  std::unique_ptr<net::Server> server_;
  std::jthread heartbeat_;
  std::atomic<bool> busy_{false};
  std::mutex mu_;
  std::condition_variable cv_;
  bool stopped_ = false;
  bool stop_requested_ = false;
  bool closed_ = false;
};

struct RemoteOptions {
  std::string registry_addr;
  Millis request_timeout{60000};
  Millis connect_timeout{2000};
};

// Drives the client half of each round over the wire. Requests go out
// concurrently; the round waits for every reply or its timeout, and clients
// that fail or time out are dropped from the round.
class RemoteExecutor final : public Executor {
 public:
  explicit RemoteExecutor(RemoteOptions options);

  void set_task_id(std::string id) { task_id_ = std::move(id); }

  // Registry listing; also refreshes the address book used by execute().
  std::vector<ClientId> available();
  // Polls the registry until at least k clients are listed. Throws kTimeout.
  std::vector<ClientId> wait_for_clients(std::size_t k, Millis deadline);

  std::vector<ClientOutcome> execute(const RoundPlan& plan, const ClientStages& stages) override;
  // Wall-clock duration of the last execute().
  double round_time(const RoundPlan& plan, const std::vector<ClientOutcome>& outcomes) const override;

  // Sample-weighted TEST_REQUEST results over the listed clients.
  std::optional<Evaluation> evaluate(const ParamVector& params, std::uint32_t round);
  // STOP to every listed client.
  void stop_clients();

 private:
  std::optional<std::string> address_of(const ClientId& id);

  RemoteOptions options_;
  std::string task_id_;
  std::mutex mu_;
  std::map<ClientId, std::string> book_;
  double last_wall_ = 0.0;
};

// Forwards records as METRICS messages.
class RemoteMetricsSink final : public MetricsSink {
 public:
  explicit RemoteMetricsSink(std::string addr, Millis timeout = Millis{5000});
  void record(const TaskMetrics& m) override;
  void record(const RoundMetrics& m) override;
  void record(const ClientMetrics& m) override;

 private:
  void send(TrackLevel level, const nlohmann::json& body);

  std::string addr_;
  Millis timeout_;
  std::mutex mu_;
  net::Stream stream_;
};

// Accepts METRICS messages into a local store.
class TrackingServer {
 public:
  TrackingServer(const std::string& addr, std::shared_ptr<TrackingStore> store);

  std::string address() const { return server_->address(); }
  void stop() { server_->stop(); }

 private:
  std::shared_ptr<TrackingStore> store_;
  std::unique_ptr<net::Server> server_;
};

}  // namespace fedsim::remote
