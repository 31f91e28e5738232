#include "fedsim/flow.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <thread>

namespace fedsim {

namespace {

ClientProfile profile_or_default(const ProfileMap& profiles, const ClientId& id) {
  auto it = profiles.find(id);
  if (it != profiles.end()) return it->second;
  ClientProfile p;
  p.client_id = id;
  return p;
}

template <typename F>
void fill(F& slot, const F& fallback) {
  if (!slot) slot = fallback;
}

}  // namespace

std::vector<ClientId> select_clients(std::span<const ClientId> available, std::size_t k, Rng& rng) {
  if (k == 0 || k > available.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "cannot select " + std::to_string(k) + " of " + std::to_string(available.size()) + " clients");
  }
  std::vector<ClientId> pool(available.begin(), available.end());
  // Partial Fisher-Yates: the first k slots become the sample.
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  return pool;
}

ParamVector aggregate(std::span<const WeightedUpdate> updates) {
  if (updates.empty()) throw Error(ErrorCode::kInvalidArgument, "nothing to aggregate");
  const auto& layout = updates.front().params.layout();
  const std::size_t n = updates.front().params.size();
  std::vector<double> acc(n, 0.0);
  double total = 0.0;
  for (const auto& u : updates) {
    if (u.params.layout() != layout) throw Error(ErrorCode::kLayoutMismatch, "updates have different layouts");
    if (!(u.weight > 0.0)) throw Error(ErrorCode::kInvalidArgument, "update weights must be positive");
    auto v = u.params.values();
    for (std::size_t i = 0; i < n; ++i) acc[i] += u.weight * static_cast<double>(v[i]);
    total += u.weight;
  }
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(acc[i] / total);
  return ParamVector(layout, std::move(out));
}

ServerStages default_server_stages() {
  ServerStages s;
  s.selection = [](std::span<const ClientId> available, std::size_t k, Rng& rng) {
    return select_clients(available, k, rng);
  };
  s.compression = [](const ParamVector& global) { return compress(global, CompressionSpec::identity()); };
  s.distribution = [](const CompressedUpdate& payload, std::span<const ClientId> selected) {
    std::vector<Packet> packets;
    const auto bytes = payload_bytes(payload);
    for (const auto& id : selected) packets.push_back(Packet{id, payload, bytes});
    return packets;
  };
  s.decompression = [](const CompressedUpdate& upload, const ParamVector& reference) {
    auto dense = decompress(upload);
    if (!upload.delta) return dense;
    if (!dense.same_layout(reference)) throw Error(ErrorCode::kLayoutMismatch, "delta does not match reference");
    auto v = dense.values();
    auto base = reference.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = base[i] + v[i];
    return dense;
  };
  s.aggregation = [](std::span<const WeightedUpdate> updates) { return aggregate(updates); };
  return s;
}

ClientStages default_client_stages(const CompressionSpec& upload) {
  upload.validate();
  ClientStages c;
  c.download = [](const Packet& packet) { return packet.payload; };
  c.decompression = [](const CompressedUpdate& payload) {
    if (payload.delta) throw Error(ErrorCode::kInvalidArgument, "client received a delta without a reference");
    return decompress(payload);
  };
  c.train = [](const ParamVector& params, const ClientContext& ctx) {
    return train_local(*ctx.model, params, ctx.train, ctx.options);
  };
  c.test = [](const ParamVector& params, const ClientContext& ctx) {
    return evaluate(*ctx.model, params, ctx.test.empty() ? ctx.train : ctx.test);
  };
  c.compression = [upload](const ParamVector& trained, const ParamVector& received) {
    if (upload.kind == CompressionSpec::Kind::kIdentity) return compress(trained, upload);
    if (!trained.same_layout(received)) throw Error(ErrorCode::kLayoutMismatch, "trained model changed layout");
    auto delta = trained;
    auto d = delta.values();
    auto base = received.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= base[i];
    auto out = compress(delta, upload);
    out.delta = true;
    return out;
  };
  c.encryption = [](CompressedUpdate update) { return encrypt(std::move(update)); };
  c.upload = [](CompressedUpdate update, const ClientContext& ctx, const TrainResult& result) {
    ClientUpdate u;
    u.client_id = ctx.client_id;
    u.bytes = payload_bytes(update);
    u.payload = std::move(update);
    u.num_samples = result.num_samples;
    u.train_loss = result.loss;
    return u;
  };
  return c;
}

ServerStages resolve(const ServerStages& overrides, const ServerStages& defaults) {
  ServerStages s = overrides;
  fill(s.selection, defaults.selection);
  fill(s.compression, defaults.compression);
  fill(s.distribution, defaults.distribution);
  fill(s.decompression, defaults.decompression);
  fill(s.aggregation, defaults.aggregation);
  return s;
}

ClientStages resolve(const ClientStages& overrides, const ClientStages& defaults) {
  ClientStages c = overrides;
  fill(c.download, defaults.download);
  fill(c.decompression, defaults.decompression);
  fill(c.train, defaults.train);
  fill(c.test, defaults.test);
  fill(c.compression, defaults.compression);
  fill(c.encryption, defaults.encryption);
  fill(c.upload, defaults.upload);
  return c;
}

ClientUpdate run_client_pipeline(const ClientStages& stages, const Packet& packet, const ClientContext& ctx) {
  auto received = stages.decompression(stages.download(packet));
  auto result = stages.train(received, ctx);
  auto compressed = stages.compression(result.params, received);
  auto sealed = stages.encryption(std::move(compressed));
  return stages.upload(std::move(sealed), ctx, result);
}

std::uint64_t client_train_seed(std::uint64_t task_seed, std::uint32_t round, const ClientId& client) {
  return derive_seed(task_seed, {hash_string("train"), round, hash_string(client)});
}

double Executor::round_time(const RoundPlan&, const std::vector<ClientOutcome>& outcomes) const {
  std::map<std::uint32_t, double> per_worker;
  for (const auto& o : outcomes) per_worker[o.worker] += o.time;
  double longest = 0.0;
  for (const auto& [_, t] : per_worker) longest = std::max(longest, t);
  return longest;
}

LocalExecutor::LocalExecutor(std::shared_ptr<const FederatedDataset> data, std::shared_ptr<const Model> model,
                             HeteroSpec hetero, ProfileMap profiles, std::size_t workers)
    : data_(std::move(data)),
      model_(std::move(model)),
      hetero_(std::move(hetero)),
      profiles_(std::move(profiles)),
      workers_(std::max<std::size_t>(workers, 1)) {}

ClientOutcome LocalExecutor::run_one(const ClientJob& job, std::uint32_t round, const ClientStages& stages) const {
  const auto& id = job.packet.client_id;
  auto it = data_->clients.find(id);
  if (it == data_->clients.end()) throw Error(ErrorCode::kUnknownClient, "no shard for client '" + id + "'");
  ClientContext ctx{id, round, model_.get(), it->second.train, it->second.test, job.options};
  ClientOutcome out;
  out.update = run_client_pipeline(stages, job.packet, ctx);
  out.worker = job.worker;
  out.download_bytes = job.packet.bytes;
  auto base = base_compute_time(it->second.train.size(), job.options.epochs, hetero_);
  out.time = simulated_round_time(base, profile_or_default(profiles_, id), hetero_, round);
  return out;
}

std::vector<ClientOutcome> LocalExecutor::execute(const RoundPlan& plan, const ClientStages& stages) {
  std::vector<ClientOutcome> outcomes;
  if (workers_ == 1) {
    for (const auto& job : plan.jobs) outcomes.push_back(run_one(job, plan.round, stages));
    return outcomes;
  }

  // One thread per worker; each runs its group in allocation order.
  std::map<std::uint32_t, std::vector<const ClientJob*>> groups;
  for (const auto& job : plan.jobs) groups[job.worker].push_back(&job);
  std::vector<std::vector<ClientOutcome>> results(groups.size());
  std::vector<std::exception_ptr> errors(groups.size());
  {
    std::vector<std::jthread> threads;
    std::size_t slot = 0;
    for (const auto& [worker, jobs] : groups) {
      threads.emplace_back([&, slot, jobs = jobs] {
        try {
          for (const auto* job : jobs) results[slot].push_back(run_one(*job, plan.round, stages));
        } catch (...) {
          errors[slot] = std::current_exception();
        }
      });
      ++slot;
    }
  }
  for (auto& e : errors) {
    if (!e) continue;
    try {
      std::rethrow_exception(e);
    } catch (const Error& err) {
      if (err.code() == ErrorCode::kTrainingDiverged) throw;
      throw Error(ErrorCode::kWorkerFailure, err.what());
    } catch (const std::exception& ex) {
      throw Error(ErrorCode::kWorkerFailure, ex.what());
    }
  }
  for (auto& r : results) {
    for (auto& o : r) outcomes.push_back(std::move(o));
  }
  return outcomes;
}

std::size_t FlowSettings::resolve_k(std::size_t available) const {
  std::size_t k;
  if (clients_per_round) {
    k = *clients_per_round;
  } else if (client_fraction) {
    k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(*client_fraction * static_cast<double>(available))));
  } else {
    k = available;
  }
  return std::min(k, available);
}

FlowEngine::FlowEngine(FlowSettings settings, ParamVector initial, ServerStages server, ClientStages client,
                       Executor& executor, Hooks hooks, MetricsSink* sink)
    : settings_(std::move(settings)),
      global_(std::move(initial)),
      server_(resolve(server, default_server_stages())),
      client_(resolve(client, default_client_stages(CompressionSpec::identity()))),
      executor_(executor),
      hooks_(std::move(hooks)),
      sink_(sink),
      selection_rng_(make_rng(settings_.seed, {hash_string("selection")})),
      scheduler_rng_(make_rng(settings_.seed, {hash_string("scheduler")})),
      task_id_(make_task_id()) {
  if (settings_.rounds == 0) throw Error(ErrorCode::kInvalidConfig, "rounds must be >= 1");
  if (!hooks_.available_clients) throw Error(ErrorCode::kInvalidArgument, "no client source");
  sched_.default_time = settings_.scheduler_default_time;
  sched_.momentum = settings_.scheduler_momentum;
}

RoundOutcome FlowEngine::run_round() {
  RoundOutcome out;
  out.round = next_round_;

  auto available = hooks_.available_clients();
  std::sort(available.begin(), available.end());
  available.erase(std::unique(available.begin(), available.end()), available.end());
  const auto k = settings_.resolve_k(available.size());
  if (k == 0 || k < std::min(settings_.min_clients, settings_.resolve_k(SIZE_MAX))) {
    throw Error(ErrorCode::kQuorumLost, "only " + std::to_string(available.size()) + " clients available");
  }

  out.selected = server_.selection(available, k, selection_rng_);

  std::vector<ClientProfile> profiles;
  for (const auto& id : out.selected) profiles.push_back(profile_or_default(sched_.profiles, id));
  const std::size_t workers = settings_.workers == 0 ? out.selected.size() : settings_.workers;
  out.allocation = allocate(profiles, workers, settings_.scheduler, sched_, scheduler_rng_);

  auto payload = server_.compression(global_);
  auto packets = server_.distribution(payload, out.selected);

  std::map<ClientId, std::uint32_t> worker_of;
  for (std::size_t w = 0; w < out.allocation.groups.size(); ++w) {
    for (const auto& id : out.allocation.groups[w]) worker_of[id] = static_cast<std::uint32_t>(w);
  }
  RoundPlan plan;
  plan.round = out.round;
  plan.allocation = out.allocation;
  for (auto& p : packets) {
    ClientJob job;
    job.options = settings_.train;
    job.options.seed = client_train_seed(settings_.seed, out.round, p.client_id);
    job.worker = worker_of.at(p.client_id);
    out.bytes_down += p.bytes;
    job.packet = std::move(p);
    plan.jobs.push_back(std::move(job));
  }

  out.outcomes = executor_.execute(plan, client_);
  std::sort(out.outcomes.begin(), out.outcomes.end(),
            [](const ClientOutcome& a, const ClientOutcome& b) { return a.update.client_id < b.update.client_id; });
  if (out.outcomes.empty() || out.outcomes.size() < settings_.min_clients) {
    throw Error(ErrorCode::kQuorumLost, std::to_string(out.outcomes.size()) + " of " +
                                            std::to_string(out.selected.size()) + " clients completed round " +
                                            std::to_string(out.round));
  }

  std::vector<WeightedUpdate> updates;
  std::map<ClientId, double> measured;
  for (const auto& o : out.outcomes) {
    if (o.update.num_samples == 0) throw Error(ErrorCode::kClientFailure, o.update.client_id + " reported n_k = 0");
    updates.push_back({server_.decompression(o.update.payload, global_), static_cast<double>(o.update.num_samples)});
    measured[o.update.client_id] = o.time;
    out.bytes_up += o.update.bytes;
  }
  global_ = server_.aggregation(updates);
  for (float v : global_.values()) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kTrainingDiverged, "global model became non-finite");
  }
  adaptive_profile(out.allocation, measured, sched_);
  out.round_time = executor_.round_time(plan, out.outcomes);
  out.global = global_;
  ++next_round_;
  return out;
}

TaskReport FlowEngine::run_task() {
  using clock = std::chrono::steady_clock;
  const auto started = clock::now();

  TaskMetrics task;
  task.task_id = task_id_;
  task.config = settings_.config_snapshot;
  task.mode = settings_.mode;
  task.rounds = settings_.rounds;
  task.start_ms = unix_millis();
  if (sink_) sink_->record(task);

  TaskReport report;
  report.task_id = task_id_;
  report.rounds = settings_.rounds;

  while (next_round_ < settings_.rounds) {
    const auto round_started = clock::now();
    auto r = run_round();
    const bool last = next_round_ == settings_.rounds;
    std::optional<Evaluation> ev;
    if (hooks_.evaluate && (last || (settings_.eval_interval > 0 && (r.round + 1) % settings_.eval_interval == 0))) {
      ev = hooks_.evaluate(global_);
    }
    const double wall = std::chrono::duration<double>(clock::now() - round_started).count();

    report.t_total += r.round_time;
    report.round_times.push_back(r.round_time);
    if (ev) {
      report.accuracy_curve.emplace_back(r.round, ev->accuracy);
      report.final_accuracy = ev->accuracy;
      report.final_loss = ev->loss;
    }

    if (sink_) {
      RoundMetrics rm;
      rm.task_id = task_id_;
      rm.round = r.round;
      if (ev) {
        rm.accuracy = ev->accuracy;
        rm.loss = ev->loss;
      }
      rm.round_time = r.round_time;
      rm.wall_time_s = wall;
      rm.bytes_up = r.bytes_up;
      rm.bytes_down = r.bytes_down;
      rm.selected = r.selected;
      rm.timestamp_ms = unix_millis();
      sink_->record(rm);
      for (const auto& o : r.outcomes) {
        ClientMetrics cm;
        cm.task_id = task_id_;
        cm.round = r.round;
        cm.client_id = o.update.client_id;
        cm.train_loss = o.update.train_loss;
        cm.num_samples = o.update.num_samples;
        cm.train_time = o.time;
        cm.upload_bytes = o.update.bytes;
        cm.download_bytes = o.download_bytes;
        cm.worker = o.worker;
        sink_->record(cm);
      }
    }
  }

  report.final_params = global_;
  report.t_round = round_time_average(report.t_total, settings_.rounds);

  task.end_ms = unix_millis();
  task.t_total = report.t_total;
  task.t_round = report.t_round;
  task.wall_time_s = std::chrono::duration<double>(clock::now() - started).count();
  task.final_accuracy = report.final_accuracy;
  task.final_loss = report.final_loss;
  task.finished = true;
  if (sink_) sink_->record(task);
  return report;
}

}  // namespace fedsim
