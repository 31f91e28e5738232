#include "fedsim/api.hpp"

#include "fedsim/log.hpp"

namespace fedsim {

namespace {

std::uint64_t stream_seed(std::uint64_t seed, std::string_view tag) { return derive_seed(seed, {hash_string(tag)}); }

}  // namespace

FederatedDataset build_dataset(const Config& config) {
  if (config.dataset.path) return load_dataset(*config.dataset.path);
  auto pool = generate_synthetic(config.dataset.synthetic, stream_seed(config.seed, "synthetic"));
  auto spec = config.partition;
  spec.seed = stream_seed(config.seed, "partition");
  return partition(pool, spec);
}

Platform::Platform(Config config) : config_(std::move(config)) {
  config_.validate();
  if (config_.dataset.path && !std::filesystem::exists(*config_.dataset.path / "manifest.json")) {
    throw Error(ErrorCode::kDatasetNotFound, "no dataset at " + config_.dataset.path->string());
  }
}

std::uint64_t Platform::partition_seed() const { return stream_seed(config_.seed, "partition"); }
std::uint64_t Platform::synthetic_seed() const { return stream_seed(config_.seed, "synthetic"); }
std::uint64_t Platform::model_seed() const { return stream_seed(config_.seed, "model"); }
std::uint64_t Platform::profile_seed() const { return stream_seed(config_.seed, "profiles"); }

void Platform::check_open(const char* slot, bool filled) const {
  if (started_) throw Error(ErrorCode::kRunInProgress, std::string("cannot register ") + slot + " after the run started");
  if (filled) throw Error(ErrorCode::kAlreadyRegistered, std::string(slot) + " already registered");
}

void Platform::register_dataset(DatasetProvider provider) {
  check_open("dataset", static_cast<bool>(dataset_provider_));
  if (!provider) throw Error(ErrorCode::kInvalidArgument, "empty dataset provider");
  dataset_provider_ = std::move(provider);
}

void Platform::register_model(ModelFactory factory) {
  check_open("model", static_cast<bool>(model_factory_));
  if (!factory) throw Error(ErrorCode::kInvalidArgument, "empty model factory");
  model_factory_ = std::move(factory);
}

void Platform::register_server(ServerStages stages) {
  check_open("server", server_stages_.has_value());
  server_stages_ = std::move(stages);
}

void Platform::register_client(ClientStages stages) {
  check_open("client", client_stages_.has_value());
  client_stages_ = std::move(stages);
}

const FederatedDataset& Platform::dataset() {
  if (!dataset_) {
    auto fd = dataset_provider_ ? dataset_provider_(config_) : build_dataset(config_);
    if (fd.clients.empty()) throw Error(ErrorCode::kInvalidArgument, "dataset has no clients");
    dataset_ = std::make_shared<const FederatedDataset>(std::move(fd));
  }
  return *dataset_;
}

std::shared_ptr<const Model> Platform::model(std::size_t feature_dim, std::size_t num_classes) {
  std::unique_ptr<Model> m =
      model_factory_ ? model_factory_(feature_dim, num_classes) : make_model(config_.model_spec(feature_dim, num_classes));
  if (!m) throw Error(ErrorCode::kInvalidArgument, "model factory returned nothing");
  if (m->feature_dim() != feature_dim || m->num_classes() != num_classes) {
    throw Error(ErrorCode::kShapeMismatch, "model shape does not match the dataset");
  }
  return m;
}

const ProfileMap& Platform::profiles() {
  if (!profiles_) {
    auto ids = dataset().client_ids();
    auto spec = config_.hetero;
    spec.assignment_seed = profile_seed();
    profiles_ = assign_profiles(ids, spec);
  }
  return *profiles_;
}

std::pair<std::size_t, std::size_t> Platform::dims() {
  if (dataset_provider_ || dataset_) {
    const auto& fd = dataset();
    return {fd.feature_dim, fd.num_classes};
  }
  if (config_.dataset.path) {
    auto info = read_manifest(*config_.dataset.path);
    return {info.feature_dim, info.num_classes};
  }
  return {config_.dataset.synthetic.feature_dim, config_.dataset.synthetic.num_classes};
}

FlowSettings Platform::flow_settings(RunMode mode) const {
  FlowSettings s;
  s.seed = config_.seed;
  s.rounds = config_.rounds;
  s.clients_per_round = config_.clients_per_round;
  s.client_fraction = config_.client_fraction;
  s.train = config_.train_options();
  s.eval_interval = config_.eval_interval;
  s.workers = mode == RunMode::kDistributed ? config_.workers : (mode == RunMode::kRemote ? 0 : 1);
  s.scheduler = config_.scheduler;
  s.scheduler_default_time = config_.scheduler_default_time;
  s.scheduler_momentum = config_.scheduler_momentum;
  s.min_clients = config_.min_clients;
  s.mode = std::string(to_string(mode));
  s.config_snapshot = config_.to_json();
  return s;
}

ClientStages Platform::client_stages() const {
  return resolve(client_stages_.value_or(ClientStages{}), default_client_stages(config_.compression));
}

std::unique_ptr<MetricsSink> Platform::make_sink(const std::optional<std::string>& remote_addr) const {
  if (remote_addr) return std::make_unique<remote::RemoteMetricsSink>(*remote_addr);
  if (config_.tracking_dir.empty()) return nullptr;
  return std::make_unique<TrackingStore>(config_.tracking_dir);
}

TaskReport Platform::run(const RunCallback& callback) {
  if (config_.mode == RunMode::kRemote) {
    throw Error(ErrorCode::kInvalidConfig, "remote mode runs through start_server / start_client");
  }
  started_ = true;
  const auto& fd = dataset();
  auto mdl = model(fd.feature_dim, fd.num_classes);
  const std::size_t workers = config_.mode == RunMode::kDistributed ? config_.workers : 1;
  auto hetero = config_.hetero;
  hetero.assignment_seed = profile_seed();
  LocalExecutor executor(dataset_, mdl, hetero, profiles(), workers);

  auto test_set = std::make_shared<const std::vector<Sample>>(fd.global_test());
  FlowEngine::Hooks hooks;
  hooks.available_clients = [ds = dataset_] { return ds->client_ids(); };
  hooks.evaluate = [mdl, test_set](const ParamVector& params) -> std::optional<Evaluation> {
    if (test_set->empty()) return std::nullopt;
    return evaluate(*mdl, params, *test_set);
  };

  auto sink = make_sink(std::nullopt);
  FlowEngine engine(flow_settings(config_.mode), mdl->init_params(model_seed()), server_stages_.value_or(ServerStages{}),
                    client_stages(), executor, std::move(hooks), sink.get());
  log::info("task ", engine.task_id(), ": ", config_.rounds, " rounds over ", fd.clients.size(), " clients");
  auto report = engine.run_task();
  if (callback) callback(report);
  return report;
}

TaskReport Platform::start_server(const ServerArgs& args, const RunCallback& callback) {
  if (config_.mode != RunMode::kRemote) throw Error(ErrorCode::kInvalidConfig, "start_server needs mode = remote");
  started_ = true;
  auto [dim, classes] = dims();
  auto mdl = model(dim, classes);

  remote::RemoteExecutor executor({args.registry_addr, args.request_timeout, std::chrono::milliseconds(2000)});
  const std::size_t need = std::max(config_.min_clients, config_.clients_per_round.value_or(1));
  auto listed = executor.wait_for_clients(need, args.wait_timeout);
  log::info("registry lists ", listed.size(), " clients");

  auto round = std::make_shared<std::uint32_t>(0);
  FlowEngine::Hooks hooks;
  hooks.available_clients = [&executor] { return executor.available(); };
  hooks.evaluate = [&executor, round](const ParamVector& params) { return executor.evaluate(params, (*round)++); };

  auto sink = make_sink(args.tracking_addr);
  FlowEngine engine(flow_settings(RunMode::kRemote), mdl->init_params(model_seed()),
                    server_stages_.value_or(ServerStages{}), client_stages(), executor, std::move(hooks), sink.get());
  executor.set_task_id(engine.task_id());
  TaskReport report;
  try {
    report = engine.run_task();
  } catch (...) {
    if (args.stop_clients) executor.stop_clients();
    throw;
  }
  if (args.stop_clients) executor.stop_clients();
  if (callback) callback(report);
  return report;
}

std::unique_ptr<remote::ClientService> Platform::launch_client(const ClientArgs& args) {
  if (config_.mode != RunMode::kRemote) throw Error(ErrorCode::kInvalidConfig, "start_client needs mode = remote");
  started_ = true;
  DatasetInfo info;
  auto shard = load_client_shard(args.shard, args.client_id, &info);
  auto mdl = model(info.feature_dim, info.num_classes);

  remote::ClientOptions opts;
  opts.client_id = args.client_id;
  opts.listen_addr = args.listen_addr;
  opts.registry_addr = args.registry_addr;
  opts.ttl_s = args.ttl_s;
  opts.register_attempts = args.register_attempts;
  opts.retry_delay = args.retry_delay;
  opts.train_delay = args.train_delay;
  if (config_.hetero.enabled && config_.hetero.real_sleep) {
    auto spec = config_.hetero;
    spec.assignment_seed = profile_seed();
    auto profiles = assign_profiles(info.client_ids, spec);
    auto it = profiles.find(args.client_id);
    ClientProfile p = it != profiles.end() ? it->second : ClientProfile{args.client_id};
    double secs = simulated_round_time(base_compute_time(shard.train.size(), config_.local_epochs, spec), p, spec);
    opts.train_delay += std::chrono::milliseconds(static_cast<long long>(secs * 1000.0));
  }
  auto service = std::make_unique<remote::ClientService>(opts, std::move(shard), mdl, client_stages());
  service->start();
  return service;
}

void Platform::start_client(const ClientArgs& args) {
  auto service = launch_client(args);
  service->wait();
}

}  // namespace fedsim
