// fedsim: command-line front end. stdout carries data (JSON lines or CSV),
// stderr carries logs.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <pthread.h>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fedsim/api.hpp"
#include "fedsim/bench.hpp"
#include "fedsim/log.hpp"
#include "fedsim/remote.hpp"
#include "fedsim/tracking.hpp"

using namespace fedsim;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Termination signals are handled on a dedicated thread so serve loops can
// shut down (flush, deregister) instead of dying mid-write.
sigset_t g_term_signals;

void block_term_signals() {
  sigemptyset(&g_term_signals);
  sigaddset(&g_term_signals, SIGINT);
  sigaddset(&g_term_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &g_term_signals, nullptr);
}

void on_terminate(std::function<void()> fn) {
  std::thread([fn = std::move(fn)] {
    int sig = 0;
    sigwait(&g_term_signals, &sig);
    log::info("signal ", sig, ", shutting down");
    fn();
  }).detach();
}

// --set a.b=value: value parsed as JSON, else taken as a string.
void apply_set(json& patch, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw CLI::ValidationError("--set", "expected key=value, got '" + assignment + "'");
  auto key = assignment.substr(0, eq);
  auto raw = assignment.substr(eq + 1);
  auto value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &patch;
  std::size_t start = 0;
  while (true) {
    auto dot = key.find('.', start);
    auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!(*node)[part].is_object()) (*node)[part] = json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

void merge_patch(json& into, const json& patch) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (it->is_object() && into.contains(it.key()) && into[it.key()].is_object()) {
      merge_patch(into[it.key()], *it);
    } else {
      into[it.key()] = *it;
    }
  }
}

// Shared config options: --config file, --set overrides, common flags.
struct ConfigArgs {
  std::string file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint32_t> rounds;
  std::optional<std::size_t> clients_per_round;
  std::optional<double> client_fraction;
  std::optional<std::string> mode;
  std::optional<std::string> scheduler;
  std::optional<std::size_t> workers;
  std::optional<std::string> dataset;
  std::optional<std::string> tracking_dir;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", file, "JSON config file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "Override a config key, e.g. --set partition.scheme=dirichlet");
    app->add_option("--seed", seed, "Random seed");
    app->add_option("--rounds", rounds, "Training rounds R");
    app->add_option("--clients-per-round", clients_per_round, "Clients per round K");
    app->add_option("--client-fraction", client_fraction, "Fraction C of clients per round");
    app->add_option("--mode", mode, "standalone | distributed | remote");
    app->add_option("--scheduler", scheduler, "greedyada | random | slowest");
    app->add_option("--workers", workers, "Workers M (distributed mode)");
    app->add_option("--dataset", dataset, "Saved federated dataset directory");
    app->add_option("--tracking-dir", tracking_dir, "Tracking store directory");
  }

  // File, then FEDSIM_TRACK_DIR, then --set, then explicit flags.
  Config resolve() const {
    json doc = json::object();
    if (!file.empty()) {
      std::ifstream in(file);
      doc = json::parse(in, nullptr, false);
      if (doc.is_discarded() || !doc.is_object()) throw Error(ErrorCode::kInvalidConfig, file + " is not a JSON object");
    }
    if (const char* env = std::getenv("FEDSIM_TRACK_DIR"); env && *env) doc["tracking_dir"] = env;
    json patch = json::object();
    for (const auto& s : sets) apply_set(patch, s);
    if (seed) patch["seed"] = *seed;
    if (rounds) patch["rounds"] = *rounds;
    if (clients_per_round) patch["clients_per_round"] = *clients_per_round;
    if (client_fraction) patch["client_fraction"] = *client_fraction;
    if (mode) patch["mode"] = *mode;
    if (scheduler) patch["scheduler"] = *scheduler;
    if (workers) patch["workers"] = *workers;
    if (dataset) patch["dataset"] = {{"path", *dataset}};
    if (tracking_dir) patch["tracking_dir"] = *tracking_dir;
    // A count or a fraction on the command line replaces the other.
    if (patch.contains("clients_per_round")) doc.erase("client_fraction");
    if (patch.contains("client_fraction")) doc.erase("clients_per_round");
    if (patch.contains("dataset")) doc.erase("dataset");
    merge_patch(doc, patch);
    return Config::from_json(doc);
  }
};

json report_json(const TaskReport& r) {
  json j;
  j["task_id"] = r.task_id;
  j["rounds"] = r.rounds;
  j["final_accuracy"] = r.final_accuracy ? json(*r.final_accuracy) : json(nullptr);
  j["final_loss"] = r.final_loss ? json(*r.final_loss) : json(nullptr);
  j["t_total"] = r.t_total;
  j["t_round"] = r.t_round;
  return j;
}

int cmd_run(const ConfigArgs& args) {
  Platform platform(args.resolve());
  auto report = platform.run();
  std::cout << report_json(report).dump() << std::endl;
  return kExitOk;
}

int cmd_partition(const ConfigArgs& args, const std::string& out) {
  auto config = args.resolve();
  auto fd = build_dataset(config);
  save_dataset(fd, out);
  json j{{"dir", out},
         {"clients", fd.clients.size()},
         {"samples", fd.total_samples()},
         {"num_classes", fd.num_classes},
         {"feature_dim", fd.feature_dim}};
  std::cout << j.dump() << std::endl;
  return kExitOk;
}

int cmd_sched_bench(const SchedBenchSpec& spec, bool summary) {
  auto rows = sched_bench(spec);
  if (!summary) {
    std::cout << "strategy,M,seed,makespan,speedup\n";
    for (const auto& r : rows) {
      std::cout << r.strategy << ',' << r.workers << ',' << r.seed << ',' << r.makespan << ',' << r.speedup << '\n';
    }
    std::cout.flush();
    return kExitOk;
  }
  std::map<std::pair<std::size_t, std::string>, std::pair<double, double>> sums;
  std::vector<std::pair<std::size_t, std::string>> order;
  for (const auto& r : rows) {
    auto key = std::make_pair(r.workers, r.strategy);
    if (!sums.contains(key)) order.push_back(key);
    sums[key].first += r.makespan;
    sums[key].second += r.speedup;
  }
  std::cout << "strategy,M,makespan,speedup\n";
  const double n = static_cast<double>(spec.seeds);
  for (const auto& key : order) {
    std::cout << key.second << ',' << key.first << ',' << sums[key].first / n << ',' << sums[key].second / n << '\n';
  }
  std::cout.flush();
  return kExitOk;
}

int cmd_registry(const std::string& host, std::uint16_t port, std::uint32_t ttl) {
  remote::RegistryServer registry(host + ":" + std::to_string(port), ttl);
  std::cout << json{{"registry", registry.address()}}.dump() << std::endl;
  std::promise<void> done;
  on_terminate([&done] { done.set_value(); });
  done.get_future().wait();
  registry.stop();
  return kExitOk;
}

int cmd_server(const ConfigArgs& args, const ServerArgs& server) {
  auto config = args.resolve();
  config.mode = RunMode::kRemote;
  Platform platform(config);
  auto report = platform.start_server(server);
  std::cout << report_json(report).dump() << std::endl;
  return kExitOk;
}

int cmd_client(const ConfigArgs& args, const ClientArgs& client) {
  auto config = args.resolve();
  config.mode = RunMode::kRemote;
  Platform platform(config);
  auto service = platform.launch_client(client);
  std::cout << json{{"client", client.client_id}, {"listen", service->address()}}.dump() << std::endl;
  auto* raw = service.get();
  on_terminate([raw] { raw->stop(); });
  service->wait();
  return kExitOk;
}

struct TrackArgs {
  std::string task;
  std::string level = "round";
  std::optional<std::uint32_t> round;
  std::optional<std::uint32_t> round_lt;
  std::optional<std::string> client;
  std::string dir;
  std::optional<std::string> serve;
};

int cmd_track(const TrackArgs& args) {
  std::string dir = args.dir;
  if (dir.empty()) {
    const char* env = std::getenv("FEDSIM_TRACK_DIR");
    dir = env && *env ? env : Config{}.tracking_dir;
  }
  if (args.serve) {
    auto store = std::make_shared<TrackingStore>(dir);
    remote::TrackingServer sink(*args.serve, store);
    std::cout << json{{"tracking", sink.address()}, {"dir", dir}}.dump() << std::endl;
    std::promise<void> done;
    on_terminate([&done] { done.set_value(); });
    done.get_future().wait();
    sink.stop();
    return kExitOk;
  }
  if (!std::filesystem::exists(dir)) {
    if (args.task.empty()) return kExitOk;
    throw Error(ErrorCode::kTaskNotFound, "task '" + args.task + "' (no store at " + dir + ")");
  }
  TrackingStore store(dir);
  if (args.task.empty()) {
    for (const auto& id : store.task_ids()) std::cout << json{{"task_id", id}}.dump() << '\n';
    std::cout.flush();
    return kExitOk;
  }
  QueryFilter filter;
  filter.round_eq = args.round;
  filter.round_lt = args.round_lt;
  filter.client_id = args.client;
  for (const auto& rec : store.query(args.task, parse_track_level(args.level), filter)) std::cout << rec.dump() << '\n';
  std::cout.flush();
  return kExitOk;
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::kTaskNotFound:
    case ErrorCode::kDatasetNotFound:
    case ErrorCode::kInvalidConfig:
    case ErrorCode::kInvalidArgument:
      return kExitUsage;
    default:
      return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  block_term_signals();
  CLI::App app{"fedsim: federated learning simulation and orchestration"};
  app.require_subcommand(1);
  app.fallthrough();
  int verbosity = 0;
  app.add_flag("-v", verbosity, "Verbose logging to stderr (-vv for debug)");

  ConfigArgs run_args, part_args, server_cfg, client_cfg;

  auto* run = app.add_subcommand("run", "Train in standalone or distributed mode");
  run_args.attach(run);

  auto* part = app.add_subcommand("partition", "Write a partitioned dataset directory");
  part_args.attach(part);
  std::string part_out;
  part->add_option("-o,--out", part_out, "Output directory")->required();

  auto* bench = app.add_subcommand("sched-bench", "Compare allocation strategies on the simulated clock");
  SchedBenchSpec bench_spec;
  bool bench_summary = false;
  bench->add_option("--seeds", bench_spec.seeds, "Number of seeds");
  bench->add_option("--first-seed", bench_spec.first_seed, "First seed");
  bench->add_option("--rounds", bench_spec.rounds, "Rounds per seed");
  bench->add_option("--clients", bench_spec.num_clients, "Clients N");
  bench->add_option("--clients-per-round", bench_spec.clients_per_round, "Clients per round K");
  bench->add_option("--workers", bench_spec.workers, "Worker counts M")->delimiter(',');
  bench->add_option("--alpha", bench_spec.alpha, "Dirichlet label skew");
  bench->add_option("--beta", bench_spec.beta, "Dirichlet size skew");
  bench->add_option("--speed-ratios", bench_spec.hetero.speed_ratios, "Device speed ratios")->delimiter(',');
  bench->add_option("--default-time", bench_spec.default_time, "Initial default time t");
  bench->add_option("--momentum", bench_spec.momentum, "Profiling momentum m");
  bench->add_flag("--summary", bench_summary, "Print per-strategy means instead of per-seed rows");

  auto* reg = app.add_subcommand("registry", "Run the client registry");
  std::string reg_host = "0.0.0.0";
  std::uint16_t reg_port = 0;
  std::uint32_t reg_ttl = remote::kDefaultTtl;
  reg->add_option("--host", reg_host, "Bind address");
  reg->add_option("-p,--port", reg_port, "Port (0 picks a free one)");
  reg->add_option("--ttl", reg_ttl, "Default registration ttl in seconds")->check(CLI::PositiveNumber);

  auto* srv = app.add_subcommand("server", "Drive a remote training task");
  server_cfg.attach(srv);
  ServerArgs server;
  double wait_s = 30, request_s = 60;
  bool keep_clients = false;
  srv->add_option("--registry", server.registry_addr, "Registry host:port")->required();
  srv->add_option("--tracking-addr", server.tracking_addr, "Remote tracking sink host:port");
  srv->add_option("--wait-timeout", wait_s, "Seconds to wait for clients");
  srv->add_option("--request-timeout", request_s, "Per-client request timeout in seconds");
  srv->add_flag("--keep-clients", keep_clients, "Do not send STOP to clients at the end");

  auto* cli = app.add_subcommand("client", "Serve training requests for one shard");
  client_cfg.attach(cli);
  ClientArgs client;
  std::string shard;
  cli->add_option("--id", client.client_id, "Client id")->required();
  cli->add_option("--shard", shard, "Dataset directory or shard file")->required();
  cli->add_option("--registry", client.registry_addr, "Registry host:port")->required();
  cli->add_option("--listen", client.listen_addr, "Listen host:port");
  cli->add_option("--ttl", client.ttl_s, "Registration ttl in seconds");
  cli->add_option("--register-attempts", client.register_attempts, "Registration attempts before giving up");

  auto* track = app.add_subcommand("track", "Query tracked metrics, or serve a remote tracking sink");
  TrackArgs track_args;
  track->add_option("--task", track_args.task, "Task id (omit to list tasks)");
  track->add_option("--level", track_args.level, "task | round | client")
      ->check(CLI::IsMember({"task", "round", "client"}));
  track->add_option("--round", track_args.round, "Only this round");
  track->add_option("--round-lt", track_args.round_lt, "Only rounds below this index");
  track->add_option("--client", track_args.client, "Only this client");
  track->add_option("--dir", track_args.dir, "Tracking store directory");
  track->add_option("--serve", track_args.serve, "Serve METRICS messages on host:port into the store");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }
  log::set_level(verbosity);

  try {
    if (*run) return cmd_run(run_args);
    if (*part) return cmd_partition(part_args, part_out);
    if (*bench) return cmd_sched_bench(bench_spec, bench_summary);
    if (*reg) return cmd_registry(reg_host, reg_port, reg_ttl);
    if (*srv) {
      server.wait_timeout = std::chrono::milliseconds(static_cast<long long>(wait_s * 1000));
      server.request_timeout = std::chrono::milliseconds(static_cast<long long>(request_s * 1000));
      server.stop_clients = !keep_clients;
      return cmd_server(server_cfg, server);
    }
    if (*cli) {
      client.shard = shard;
      return cmd_client(client_cfg, client);
    }
    if (*track) return cmd_track(track_args);
  } catch (const Error& e) {
    std::cerr << "fedsim: " << e.what() << std::endl;
    return exit_code_for(e);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "fedsim: " << e.what() << std::endl;
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "fedsim: " << e.what() << std::endl;
    return kExitRuntime;
  }
  return kExitUsage;
}
