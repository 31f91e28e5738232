#include "fedsim/remote.hpp"

#include <algorithm>

#include "fedsim/log.hpp"

namespace fedsim::remote {

using namespace std::chrono;
using proto::Status;

namespace {

SteadyClock or_default(SteadyClock clock) {
  if (clock) return clock;
  return [] { return steady_clock::now(); };
}

template <typename T>
const T* expect(const proto::Message& m) {
  return std::get_if<T>(&m);
}

[[noreturn]] void fail_reply(const proto::Message& reply, const std::string& what) {
  if (auto* e = expect<proto::ErrorReply>(reply)) {
    throw Error(ErrorCode::kRemoteError, what + ": code " + std::to_string(e->code) + " " + e->detail);
  }
  throw Error(ErrorCode::kRemoteError, what + ": unexpected " + std::string(proto::type_name(proto::type_of(reply))));
}

bool is_ok(const proto::Message& reply) {
  auto* e = expect<proto::ErrorReply>(reply);
  return e && e->code == static_cast<std::uint16_t>(Status::kOk);
}

}  // namespace

// Registry

RegistryTable::RegistryTable(std::uint32_t default_ttl_s, SteadyClock clock)
    : default_ttl_(default_ttl_s), clock_(or_default(std::move(clock))) {
  if (default_ttl_ == 0) throw Error(ErrorCode::kInvalidArgument, "default ttl must be positive");
}

std::uint32_t RegistryTable::upsert(const ClientId& id, const std::string& addr, std::uint32_t ttl_s) {
  if (id.empty()) throw Error(ErrorCode::kInvalidArgument, "empty client id");
  const auto ttl = ttl_s == 0 ? default_ttl_ : ttl_s;
  std::lock_guard lock(mu_);
  entries_[id] = Entry{addr, ttl, clock_() + seconds(ttl)};
  return ttl;
}

bool RegistryTable::renew(const ClientId& id) {
  std::lock_guard lock(mu_);
  auto it = entries_.find(id);
  if (it == entries_.end()) return false;
  auto now = clock_();
  if (it->second.expiry <= now) {
    entries_.erase(it);
    return false;
  }
  it->second.expiry = now + seconds(it->second.ttl_s);
  return true;
}

bool RegistryTable::remove(const ClientId& id) {
  std::lock_guard lock(mu_);
  return entries_.erase(id) > 0;
}

std::vector<proto::ClientEntry> RegistryTable::live() {
  std::lock_guard lock(mu_);
  auto now = clock_();
  std::erase_if(entries_, [now](const auto& kv) { return kv.second.expiry <= now; });
  std::vector<proto::ClientEntry> out;
  for (const auto& [id, e] : entries_) out.push_back({id, e.addr});
  return out;
}

proto::Message RegistryTable::handle(const proto::Message& request) {
  if (auto* r = expect<proto::Register>(request)) {
    if (r->listen_addr.empty()) {
      remove(r->client_id);
      return proto::RegisterAck{0};
    }
    return proto::RegisterAck{upsert(r->client_id, r->listen_addr, r->ttl_s)};
  }
  if (auto* h = expect<proto::Heartbeat>(request)) {
    if (!renew(h->client_id)) return proto::error_reply(Status::kNotFound, "unknown client " + h->client_id);
    return proto::ok_reply();
  }
  if (expect<proto::ListClients>(request)) return proto::ClientList{live()};
  return proto::error_reply(Status::kBadRequest,
                            "registry does not handle " + std::string(proto::type_name(proto::type_of(request))));
}

RegistryServer::RegistryServer(const std::string& addr, std::uint32_t default_ttl_s, SteadyClock clock)
    : table_(default_ttl_s, std::move(clock)),
      server_(std::make_unique<net::Server>(addr, [this](const proto::Message& m) -> std::optional<proto::Message> {
        return table_.handle(m);
      })) {}

std::vector<proto::ClientEntry> list_clients(const std::string& registry, Millis timeout) {
  proto::Message reply;
  try {
    reply = net::call(registry, proto::ListClients{}, timeout);
  } catch (const Error& e) {
    throw Error(ErrorCode::kRegistryUnreachable, e.what());
  }
  if (auto* l = expect<proto::ClientList>(reply)) return l->entries;
  fail_reply(reply, "LIST_CLIENTS");
}

// Client service

ClientService::ClientService(ClientOptions options, ClientShard shard, std::shared_ptr<const Model> model,
                             ClientStages stages)
    : options_(std::move(options)),
      shard_(std::move(shard)),
      model_(std::move(model)),
      stages_(resolve(stages, default_client_stages(CompressionSpec::identity()))) {
  if (options_.client_id.empty()) throw Error(ErrorCode::kInvalidArgument, "client id required");
  if (options_.registry_addr.empty()) throw Error(ErrorCode::kInvalidArgument, "registry address required");
  if (!model_) throw Error(ErrorCode::kInvalidArgument, "client needs a model");
  if (options_.register_attempts < 1) options_.register_attempts = 1;
}

ClientService::~ClientService() { shutdown(false); }

std::string ClientService::address() const { return server_ ? server_->address() : options_.listen_addr; }

void ClientService::start() {
  server_ = std::make_unique<net::Server>(options_.listen_addr,
                                          [this](const proto::Message& m) { return handle(m); });
  try {
    register_self();
  } catch (...) {
    server_->stop();
    throw;
  }
  heartbeat_ = std::jthread([this](std::stop_token st) { heartbeat_loop(st); });
  log::info("client ", options_.client_id, " serving on ", address());
}

void ClientService::register_self() {
  std::string last;
  for (int attempt = 0; attempt < options_.register_attempts; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(options_.retry_delay);
    try {
      auto reply = net::call(options_.registry_addr, proto::Register{options_.client_id, address(), options_.ttl_s},
                             options_.call_timeout);
      if (auto* ack = expect<proto::RegisterAck>(reply)) {
        if (!options_.heartbeat_interval) options_.heartbeat_interval = Millis(ack->ttl_s * 1000 / 3);
        return;
      }
      fail_reply(reply, "REGISTER");
    } catch (const Error& e) {
      last = e.what();
      log::debug("register attempt ", attempt + 1, " failed: ", last);
    }
  }
  throw Error(ErrorCode::kRegistryUnreachable,
              options_.registry_addr + " after " + std::to_string(options_.register_attempts) + " attempts: " + last);
}

void ClientService::heartbeat_loop(std::stop_token st) {
  auto interval = std::max(*options_.heartbeat_interval, Millis(10));
  std::unique_lock lock(mu_);
  while (!st.stop_requested()) {
    if (cv_.wait_for(lock, interval, [&] { return st.stop_requested() || closed_; })) break;
    lock.unlock();
    try {
      auto reply = net::call(options_.registry_addr, proto::Heartbeat{options_.client_id}, options_.call_timeout);
      if (!is_ok(reply)) {
        // The registry forgot us (restart or expiry): register again.
        net::call(options_.registry_addr, proto::Register{options_.client_id, address(), options_.ttl_s},
                  options_.call_timeout);
      }
    } catch (const Error& e) {
      log::warn("heartbeat from ", options_.client_id, " failed: ", e.what());
    }
    lock.lock();
  }
}

std::optional<proto::Message> ClientService::handle(const proto::Message& request) {
  if (expect<proto::Stop>(request)) {
    {
      std::lock_guard lock(mu_);
      stop_requested_ = true;
    }
    cv_.notify_all();
    return proto::ok_reply();
  }
  const bool work = expect<proto::TrainRequest>(request) || expect<proto::TestRequest>(request);
  if (!work) {
    return proto::error_reply(Status::kBadRequest,
                              "client does not handle " + std::string(proto::type_name(proto::type_of(request))));
  }
  if (busy_.exchange(true)) return proto::error_reply(Status::kBusy, options_.client_id + " is busy");
  struct Release {
    std::atomic<bool>& flag;
    ~Release() { flag = false; }
  } release{busy_};
  if (auto* t = expect<proto::TrainRequest>(request)) return train(*t);
  return test(std::get<proto::TestRequest>(request));
}

proto::Message ClientService::train(const proto::TrainRequest& req) {
  if (options_.train_delay.count() > 0) {
    std::unique_lock lock(mu_);
    if (cv_.wait_for(lock, options_.train_delay, [&] { return closed_; })) {
      throw Error(ErrorCode::kClientFailure, "client shut down during training");
    }
  }
  Packet packet{options_.client_id, decode_update(req.update), req.update.size()};
  ClientContext ctx{options_.client_id, req.round, model_.get(), shard_.train, shard_.test,
                    proto::to_train_options(req.hyper)};
  auto update = run_client_pipeline(stages_, packet, ctx);
  proto::TrainResult out;
  out.client_id = options_.client_id;
  out.round = req.round;
  out.num_samples = update.num_samples;
  out.train_loss = update.train_loss;
  out.update = encode_update(update.payload);
  log::debug(options_.client_id, " trained round ", req.round, " loss ", update.train_loss);
  return out;
}

proto::Message ClientService::test(const proto::TestRequest& req) {
  auto params = decode_params(req.model);
  ClientContext ctx{options_.client_id, req.round, model_.get(), shard_.train, shard_.test, {}};
  auto ev = stages_.test(params, ctx);
  return proto::TestResult{ev.loss, ev.accuracy, static_cast<std::uint32_t>(ev.num_samples)};
}

void ClientService::wait() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return stop_requested_ || closed_; });
  const bool from_stop = stop_requested_ && !closed_;
  lock.unlock();
  if (from_stop) shutdown(true);
}

void ClientService::stop() { shutdown(true); }
void ClientService::kill() { shutdown(false); }

void ClientService::shutdown(bool deregister) {
  {
    std::lock_guard lock(mu_);
    if (closed_) return;
    closed_ = true;
  }
  cv_.notify_all();
  if (heartbeat_.joinable()) {
    heartbeat_.request_stop();
    heartbeat_.join();
  }
  if (server_) server_->stop();
  if (deregister && server_) {
    try {
      net::call(options_.registry_addr, proto::Register{options_.client_id, "", 0}, options_.call_timeout);
    } catch (const Error& e) {
      log::warn("deregistration of ", options_.client_id, " failed: ", e.what());
    }
  }
}

// Remote executor

RemoteExecutor::RemoteExecutor(RemoteOptions options) : options_(std::move(options)) {
  if (options_.registry_addr.empty()) throw Error(ErrorCode::kInvalidArgument, "registry address required");
}

std::vector<ClientId> RemoteExecutor::available() {
  auto entries = list_clients(options_.registry_addr, options_.connect_timeout);
  std::lock_guard lock(mu_);
  std::vector<ClientId> ids;
  for (auto& e : entries) {
    ids.push_back(e.client_id);
    book_[e.client_id] = e.addr;
  }
  return ids;
}

std::vector<ClientId> RemoteExecutor::wait_for_clients(std::size_t k, Millis deadline) {
  auto until = steady_clock::now() + deadline;
  while (true) {
    std::vector<ClientId> ids;
    try {
      ids = available();
    } catch (const Error& e) {
      log::warn(e.what());
    }
    if (ids.size() >= k && k > 0) return ids;
    if (steady_clock::now() >= until) {
      throw Error(ErrorCode::kTimeout, "registry lists " + std::to_string(ids.size()) + " of " + std::to_string(k) +
                                           " required clients");
    }
    log::info("waiting for clients: ", ids.size(), "/", k);
    std::this_thread::sleep_for(Millis(100));
  }
}

std::optional<std::string> RemoteExecutor::address_of(const ClientId& id) {
  std::lock_guard lock(mu_);
  auto it = book_.find(id);
  if (it == book_.end()) return std::nullopt;
  return it->second;
}

std::vector<ClientOutcome> RemoteExecutor::execute(const RoundPlan& plan, const ClientStages&) {
  const auto started = steady_clock::now();
  std::vector<std::optional<ClientOutcome>> slots(plan.jobs.size());
  {
    std::vector<std::jthread> inflight;
    for (std::size_t i = 0; i < plan.jobs.size(); ++i) {
      inflight.emplace_back([&, i] {
        const auto& job = plan.jobs[i];
        const auto& id = job.packet.client_id;
        try {
          auto addr = address_of(id);
          if (!addr) throw Error(ErrorCode::kUnknownClient, "no address for " + id);
          proto::TrainRequest req{task_id_, plan.round, proto::to_hyperparams(job.options),
                                  encode_update(job.packet.payload)};
          const auto t0 = steady_clock::now();
          auto reply = net::call(*addr, req, options_.request_timeout);
          auto* res = expect<proto::TrainResult>(reply);
          if (!res) fail_reply(reply, "TRAIN_REQUEST to " + id);
          if (res->client_id != id || res->round != plan.round) {
            throw Error(ErrorCode::kClientFailure, "mismatched TRAIN_RESULT from " + id);
          }
          ClientOutcome o;
          o.update.client_id = id;
          o.update.payload = decode_update(res->update);
          o.update.num_samples = res->num_samples;
          o.update.train_loss = res->train_loss;
          o.update.bytes = payload_bytes(o.update.payload);
          o.time = duration<double>(steady_clock::now() - t0).count();
          o.worker = job.worker;
          o.download_bytes = job.packet.bytes;
          slots[i] = std::move(o);
        } catch (const std::exception& e) {
          log::warn("dropping ", id, " from round ", plan.round, ": ", e.what());
        }
      });
    }
  }
  std::vector<ClientOutcome> out;
  for (auto& s : slots) {
    if (s) out.push_back(std::move(*s));
  }
  last_wall_ = duration<double>(steady_clock::now() - started).count();
  return out;
}

double RemoteExecutor::round_time(const RoundPlan&, const std::vector<ClientOutcome>&) const { return last_wall_; }

std::optional<Evaluation> RemoteExecutor::evaluate(const ParamVector& params, std::uint32_t round) {
  std::map<ClientId, std::string> book;
  {
    std::lock_guard lock(mu_);
    book = book_;
  }
  const auto model = encode_params(params);
  std::vector<std::optional<proto::TestResult>> results(book.size());
  {
    std::vector<std::jthread> inflight;
    std::size_t i = 0;
    for (const auto& [id, addr] : book) {
      inflight.emplace_back([&, i, id = id, addr = addr] {
        try {
          auto reply = net::call(addr, proto::TestRequest{task_id_, round, model}, options_.request_timeout);
          if (auto* r = expect<proto::TestResult>(reply)) {
            results[i] = *r;
          } else {
            fail_reply(reply, "TEST_REQUEST to " + id);
          }
        } catch (const std::exception& e) {
          log::debug("no test result from ", id, ": ", e.what());
        }
      });
      ++i;
    }
  }
  double loss = 0.0, correct = 0.0;
  std::size_t n = 0;
  for (const auto& r : results) {
    if (!r || r->num_samples == 0) continue;
    loss += r->loss * r->num_samples;
    correct += r->accuracy * r->num_samples;
    n += r->num_samples;
  }
  if (n == 0) return std::nullopt;
  return Evaluation{loss / static_cast<double>(n), correct / static_cast<double>(n), n};
}

void RemoteExecutor::stop_clients() {
  std::map<ClientId, std::string> book;
  {
    std::lock_guard lock(mu_);
    book = book_;
  }
  for (const auto& [id, addr] : book) {
    try {
      net::call(addr, proto::Stop{}, options_.connect_timeout);
    } catch (const Error& e) {
      log::debug("STOP to ", id, " failed: ", e.what());
    }
  }
}

// Remote tracking

RemoteMetricsSink::RemoteMetricsSink(std::string addr, Millis timeout) : addr_(std::move(addr)), timeout_(timeout) {}

void RemoteMetricsSink::record(const TaskMetrics& m) { send(TrackLevel::kTask, m); }
void RemoteMetricsSink::record(const RoundMetrics& m) { send(TrackLevel::kRound, m); }
void RemoteMetricsSink::record(const ClientMetrics& m) { send(TrackLevel::kClient, m); }

void RemoteMetricsSink::send(TrackLevel level, const nlohmann::json& body) {
  proto::Metrics msg{static_cast<std::uint8_t>(level), body.dump()};
  std::lock_guard lock(mu_);
  std::optional<proto::Message> reply;
  // One reconnect covers a sink that restarted between records.
  for (int attempt = 0; attempt < 2 && !reply; ++attempt) {
    try {
      if (!stream_.valid()) stream_ = net::Stream::connect(addr_, timeout_);
      stream_.send(msg);
      reply = stream_.recv(timeout_);
      if (!reply) throw Error(ErrorCode::kConnectionFailed, "tracking sink closed the connection");
    } catch (const Error& e) {
      stream_ = net::Stream();
      if (attempt == 1) throw Error(ErrorCode::kStorageIo, std::string("remote tracking: ") + e.what());
    }
  }
  if (!is_ok(*reply)) fail_reply(*reply, "METRICS");
}

TrackingServer::TrackingServer(const std::string& addr, std::shared_ptr<TrackingStore> store)
    : store_(std::move(store)) {
  if (!store_) throw Error(ErrorCode::kInvalidArgument, "tracking server needs a store");
  server_ = std::make_unique<net::Server>(addr, [this](const proto::Message& m) -> std::optional<proto::Message> {
    auto* metrics = expect<proto::Metrics>(m);
    if (!metrics) return proto::error_reply(Status::kBadRequest, "expected METRICS");
    auto body = nlohmann::json::parse(metrics->body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) return proto::error_reply(Status::kBadRequest, "malformed JSON body");
    try {
      switch (metrics->level) {
        case 0: store_->record(body.get<TaskMetrics>()); break;
        case 1: store_->record(body.get<RoundMetrics>()); break;
        case 2: store_->record(body.get<ClientMetrics>()); break;
        default: return proto::error_reply(Status::kBadRequest, "unknown level " + std::to_string(metrics->level));
      }
    } catch (const nlohmann::json::exception& e) {
      return proto::error_reply(Status::kBadRequest, e.what());
    }
    return proto::ok_reply();
  });
}

}  // namespace fedsim::remote
