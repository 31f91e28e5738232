#include "fedsim/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "fedsim/error.hpp"

namespace fedsim {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorCode::kInvalidConfig, what); }

void check_keys(const json& j, const char* where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) bad(std::string(where) + " must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!ok.contains(it.key())) bad("unknown key '" + it.key() + "' in " + where);
  }
}

template <typename T>
void take(const json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    bad(std::string("wrong type for '") + key + "'");
  }
}

// Integers must be non-negative whole numbers; nlohmann would otherwise
// truncate 2.5 or wrap -1.
template <typename T>
void take_uint(const json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_number_integer() || (it->is_number_integer() && !it->is_number_unsigned() && it->get<std::int64_t>() < 0)) {
    bad(std::string("'") + key + "' must be a non-negative integer");
  }
  out = static_cast<T>(it->get<std::uint64_t>());
}

ModelKind parse_model(const std::string& s) {
  if (s == "logreg") return ModelKind::kLogReg;
  if (s == "mlp") return ModelKind::kMlp;
  bad("unknown model '" + s + "'");
}

SchedulerKind parse_scheduler(const std::string& s) {
  if (s == "greedyada") return SchedulerKind::kGreedyAda;
  if (s == "random") return SchedulerKind::kRandom;
  if (s == "slowest") return SchedulerKind::kSlowest;
  bad("unknown scheduler '" + s + "'");
}

RunMode parse_mode(const std::string& s) {
  if (s == "standalone") return RunMode::kStandalone;
  if (s == "distributed") return RunMode::kDistributed;
  if (s == "remote") return RunMode::kRemote;
  bad("unknown mode '" + s + "'");
}

PartitionScheme parse_scheme(const std::string& s) {
  if (s == "iid") return PartitionScheme::kIid;
  if (s == "dirichlet") return PartitionScheme::kDirichlet;
  if (s == "class_per_client") return PartitionScheme::kClassPerClient;
  if (s == "realistic") return PartitionScheme::kRealistic;
  bad("unknown partition scheme '" + s + "'");
}

void merge_dataset(DatasetSource& d, const json& j) {
  if (j.is_string()) {
    d.path = j.get<std::string>();
    return;
  }
  check_keys(j, "dataset", {"path", "synthetic"});
  if (j.contains("path") && j.contains("synthetic")) bad("dataset takes either path or synthetic");
  if (j.contains("path")) {
    std::string p;
    take(j, "path", p);
    d.path = p;
  }
  if (auto it = j.find("synthetic"); it != j.end()) {
    d.path.reset();
    check_keys(*it, "dataset.synthetic", {"num_classes", "feature_dim", "total_samples", "separation"});
    take_uint(*it, "num_classes", d.synthetic.num_classes);
    take_uint(*it, "feature_dim", d.synthetic.feature_dim);
    take_uint(*it, "total_samples", d.synthetic.total_samples);
    take(*it, "separation", d.synthetic.separation);
  }
}

void merge_partition(PartitionSpec& p, const json& j) {
  check_keys(j, "partition", {"scheme", "num_clients", "alpha", "classes_per_client", "unbalanced", "beta", "test_fraction"});
  if (j.contains("scheme")) {
    std::string s;
    take(j, "scheme", s);
    p.scheme = parse_scheme(s);
  }
  take_uint(j, "num_clients", p.num_clients);
  take(j, "alpha", p.alpha);
  take_uint(j, "classes_per_client", p.classes_per_client);
  take(j, "test_fraction", p.test_fraction);
  if (auto it = j.find("unbalanced"); it != j.end()) {
    if (it->is_boolean()) {
      if (it->get<bool>()) {
        if (!p.unbalanced_beta) p.unbalanced_beta = 0.5;
      } else {
        p.unbalanced_beta.reset();
      }
    } else if (it->is_number()) {
      p.unbalanced_beta = it->get<double>();
    } else {
      bad("partition.unbalanced must be a boolean or a beta value");
    }
  }
  if (auto it = j.find("beta"); it != j.end()) {
    if (!it->is_number()) bad("partition.beta must be a number");
    p.unbalanced_beta = it->get<double>();
  }
}

void merge_hetero(HeteroSpec& h, const json& j) {
  check_keys(j, "hetero", {"enabled", "speed_ratios", "network_delay", "throughput", "real_sleep"});
  take(j, "enabled", h.enabled);
  take(j, "speed_ratios", h.speed_ratios);
  take(j, "throughput", h.throughput);
  take(j, "real_sleep", h.real_sleep);
  if (auto it = j.find("network_delay"); it != j.end()) {
    if (it->is_null()) {
      h.network_delay.reset();
    } else if (it->is_array() && it->size() == 2 && (*it)[0].is_number() && (*it)[1].is_number()) {
      h.network_delay = DelayRange{(*it)[0].get<double>(), (*it)[1].get<double>()};
    } else {
      bad("hetero.network_delay must be [lo, hi] or null");
    }
  }
}

CompressionSpec parse_compression(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "identity") return CompressionSpec::identity();
    bad("unknown compression '" + j.get<std::string>() + "'");
  }
  check_keys(j, "compression", {"topk"});
  if (!j.contains("topk") || !j["topk"].is_number()) bad("compression must be \"identity\" or {\"topk\": ratio}");
  return CompressionSpec::topk(j["topk"].get<double>());
}

}  // namespace

std::string_view to_string(RunMode mode) {
  switch (mode) {
    case RunMode::kStandalone: return "standalone";
    case RunMode::kDistributed: return "distributed";
    case RunMode::kRemote: return "remote";
  }
  return "?";
}

std::string_view to_string(SchedulerKind kind) {
  switch (kind) {
    case SchedulerKind::kGreedyAda: return "greedyada";
    case SchedulerKind::kRandom: return "random";
    case SchedulerKind::kSlowest: return "slowest";
  }
  return "?";
}

std::string_view to_string(PartitionScheme scheme) {
  switch (scheme) {
    case PartitionScheme::kIid: return "iid";
    case PartitionScheme::kDirichlet: return "dirichlet";
    case PartitionScheme::kClassPerClient: return "class_per_client";
    case PartitionScheme::kRealistic: return "realistic";
  }
  return "?";
}

void Config::validate() const {
  if (rounds < 1) bad("rounds must be >= 1");
  if (clients_per_round && client_fraction) bad("set clients_per_round or client_fraction, not both");
  if (!clients_per_round && !client_fraction) bad("one of clients_per_round or client_fraction is required");
  if (clients_per_round && *clients_per_round < 1) bad("clients_per_round must be >= 1");
  if (client_fraction && !(*client_fraction > 0.0 && *client_fraction <= 1.0)) bad("client_fraction must be in (0, 1]");
  if (local_epochs < 1) bad("local_epochs must be >= 1");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) bad("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum <= 1.0)) bad("momentum must be in [0, 1]");
  if (model == ModelKind::kMlp && hidden_dim < 1) bad("hidden_dim must be >= 1");
  if (workers < 1) bad("workers must be >= 1");
  if (!(scheduler_default_time >= 0.0) || !std::isfinite(scheduler_default_time)) {
    bad("scheduler_default_time must be >= 0");
  }
  if (!(scheduler_momentum >= 0.0 && scheduler_momentum <= 1.0)) bad("scheduler_momentum must be in [0, 1]");
  if (eval_interval < 1) bad("eval_interval must be >= 1");
  if (min_clients < 1) bad("min_clients must be >= 1");
  if (!dataset.path) {
    const auto& s = dataset.synthetic;
    if (s.num_classes < 2 || s.feature_dim < 1 || s.total_samples < 1) bad("synthetic dataset dimensions must be positive");
    if (!(s.separation >= 0.0)) bad("synthetic separation must be >= 0");
    if (partition.scheme == PartitionScheme::kRealistic) bad("the realistic scheme needs a dataset path");
    partition.validate(s.num_classes);
  } else {
    if (!(partition.test_fraction >= 0.0 && partition.test_fraction < 1.0)) bad("test_fraction must be in [0, 1)");
  }
  hetero.validate();
  try {
    compression.validate();
  } catch (const Error& e) {
    bad(e.what());
  }
}

void Config::merge(const json& j) {
  check_keys(j, "config",
             {"seed", "rounds", "clients_per_round", "client_fraction", "local_epochs", "batch_size", "learning_rate",
              "momentum", "model", "hidden_dim", "dataset", "partition", "hetero", "workers", "scheduler",
              "scheduler_default_time", "scheduler_momentum", "mode", "tracking_dir", "compression", "encryption",
              "eval_interval", "min_clients"});
  if (j.contains("clients_per_round") && j.contains("client_fraction")) {
    bad("set clients_per_round or client_fraction, not both");
  }
  take_uint(j, "seed", seed);
  take_uint(j, "rounds", rounds);
  if (j.contains("clients_per_round")) {
    std::size_t k = 0;
    take_uint(j, "clients_per_round", k);
    clients_per_round = k;
    client_fraction.reset();
  }
  if (j.contains("client_fraction")) {
    double c = 0.0;
    take(j, "client_fraction", c);
    client_fraction = c;
    clients_per_round.reset();
  }
  take_uint(j, "local_epochs", local_epochs);
  take_uint(j, "batch_size", batch_size);
  take(j, "learning_rate", learning_rate);
  take(j, "momentum", momentum);
  if (j.contains("model")) {
    std::string m;
    take(j, "model", m);
    model = parse_model(m);
  }
  take_uint(j, "hidden_dim", hidden_dim);
  if (auto it = j.find("dataset"); it != j.end()) merge_dataset(dataset, *it);
  if (auto it = j.find("partition"); it != j.end()) merge_partition(partition, *it);
  if (auto it = j.find("hetero"); it != j.end()) merge_hetero(hetero, *it);
  take_uint(j, "workers", workers);
  if (j.contains("scheduler")) {
    std::string s;
    take(j, "scheduler", s);
    scheduler = parse_scheduler(s);
  }
  take(j, "scheduler_default_time", scheduler_default_time);
  take(j, "scheduler_momentum", scheduler_momentum);
  if (j.contains("mode")) {
    std::string s;
    take(j, "mode", s);
    mode = parse_mode(s);
  }
  take(j, "tracking_dir", tracking_dir);
  if (auto it = j.find("compression"); it != j.end()) compression = parse_compression(*it);
  if (auto it = j.find("encryption"); it != j.end()) {
    if (!it->is_string() || it->get<std::string>() != "identity") bad("encryption supports only \"identity\"");
  }
  take_uint(j, "eval_interval", eval_interval);
  take_uint(j, "min_clients", min_clients);
}

Config Config::from_json(const json& j) {
  Config c;
  c.merge(j);
  c.validate();
  return c;
}

Config Config::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) bad("cannot read config " + file.string());
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) bad("config " + file.string() + " is not valid JSON");
  return from_json(j);
}

json Config::to_json() const {
  json j;
  j["seed"] = seed;
  j["rounds"] = rounds;
  if (clients_per_round) j["clients_per_round"] = *clients_per_round;
  if (client_fraction) j["client_fraction"] = *client_fraction;
  j["local_epochs"] = local_epochs;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["momentum"] = momentum;
  j["model"] = model == ModelKind::kLogReg ? "logreg" : "mlp";
  j["hidden_dim"] = hidden_dim;
  if (dataset.path) {
    j["dataset"] = {{"path", dataset.path->string()}};
  } else {
    const auto& s = dataset.synthetic;
    j["dataset"] = {{"synthetic",
                     {{"num_classes", s.num_classes},
                      {"feature_dim", s.feature_dim},
                      {"total_samples", s.total_samples},
                      {"separation", s.separation}}}};
  }
  json p = {{"scheme", to_string(partition.scheme)},
            {"num_clients", partition.num_clients},
            {"alpha", partition.alpha},
            {"classes_per_client", partition.classes_per_client},
            {"unbalanced", partition.unbalanced_beta.has_value()},
            {"test_fraction", partition.test_fraction}};
  if (partition.unbalanced_beta) p["beta"] = *partition.unbalanced_beta;
  j["partition"] = p;
  json h = {{"enabled", hetero.enabled},
            {"speed_ratios", hetero.speed_ratios},
            {"throughput", hetero.throughput},
            {"real_sleep", hetero.real_sleep}};
  h["network_delay"] = hetero.network_delay ? json::array({hetero.network_delay->lo, hetero.network_delay->hi}) : json(nullptr);
  j["hetero"] = h;
  j["workers"] = workers;
  j["scheduler"] = to_string(scheduler);
  j["scheduler_default_time"] = scheduler_default_time;
  j["scheduler_momentum"] = scheduler_momentum;
  j["mode"] = to_string(mode);
  j["tracking_dir"] = tracking_dir;
  if (compression.kind == CompressionSpec::Kind::kIdentity) {
    j["compression"] = "identity";
  } else {
    j["compression"] = {{"topk", compression.ratio}};
  }
  j["encryption"] = "identity";
  j["eval_interval"] = eval_interval;
  j["min_clients"] = min_clients;
  return j;
}

ModelSpec Config::model_spec(std::size_t feature_dim, std::size_t num_classes) const {
  ModelSpec s;
  s.kind = model;
  s.feature_dim = feature_dim;
  s.num_classes = num_classes;
  s.hidden_dim = hidden_dim;
  return s;
}

TrainOptions Config::train_options() const {
  TrainOptions o;
  o.epochs = local_epochs;
  o.batch_size = batch_size;
  o.learning_rate = learning_rate;
  o.momentum = momentum;
  return o;
}

}  // namespace fedsim
