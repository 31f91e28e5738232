#include "fedsim/tracking.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <random>

#include "fedsim/error.hpp"

namespace fedsim {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <typename T>
std::optional<T> get_opt(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<T>();
}

bool valid_task_id(const std::string& id) {
  if (id.empty() || id.size() > 128) return false;
  for (char c : id) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
    if (!ok) return false;
  }
  return true;
}

void append_line(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error(ErrorCode::kStorageIo, "cannot open " + path.string());
  out << j.dump() << '\n';
  out.flush();
  if (!out) throw Error(ErrorCode::kStorageIo, "write failed on " + path.string());
}

std::vector<json> read_lines(const fs::path& path) {
  std::vector<json> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    // A torn final line from a crash is skipped rather than failing the query.
    auto j = json::parse(line, nullptr, false);
    if (!j.is_discarded()) out.push_back(std::move(j));
  }
  return out;
}

}  // namespace

std::string_view to_string(TrackLevel level) {
  switch (level) {
    case TrackLevel::kTask: return "task";
    case TrackLevel::kRound: return "round";
    case TrackLevel::kClient: return "client";
  }
  return "?";
}

TrackLevel parse_track_level(std::string_view s) {
  if (s == "task") return TrackLevel::kTask;
  if (s == "round") return TrackLevel::kRound;
  if (s == "client") return TrackLevel::kClient;
  throw Error(ErrorCode::kInvalidArgument, "unknown tracking level '" + std::string(s) + "'");
}

void to_json(json& j, const TaskMetrics& m) {
  j = json{{"task_id", m.task_id},         {"config", m.config},    {"mode", m.mode},
           {"rounds", m.rounds},           {"start_ms", m.start_ms}, {"end_ms", m.end_ms},
           {"t_total", m.t_total},         {"t_round", m.t_round},   {"wall_time_s", m.wall_time_s},
           {"final_accuracy", opt(m.final_accuracy)}, {"final_loss", opt(m.final_loss)},
           {"finished", m.finished}};
}

void from_json(const json& j, TaskMetrics& m) {
  j.at("task_id").get_to(m.task_id);
  m.config = j.value("config", json::object());
  m.mode = j.value("mode", "");
  j.at("rounds").get_to(m.rounds);
  m.start_ms = j.value("start_ms", std::int64_t{0});
  m.end_ms = j.value("end_ms", std::int64_t{0});
  m.t_total = j.value("t_total", 0.0);
  m.t_round = j.value("t_round", 0.0);
  m.wall_time_s = j.value("wall_time_s", 0.0);
  m.final_accuracy = get_opt<double>(j, "final_accuracy");
  m.final_loss = get_opt<double>(j, "final_loss");
  m.finished = j.value("finished", false);
}

void to_json(json& j, const RoundMetrics& m) {
  j = json{{"task_id", m.task_id},       {"round", m.round},       {"accuracy", opt(m.accuracy)},
           {"loss", opt(m.loss)},        {"round_time", m.round_time}, {"wall_time_s", m.wall_time_s},
           {"bytes_up", m.bytes_up},     {"bytes_down", m.bytes_down}, {"selected", m.selected},
           {"timestamp_ms", m.timestamp_ms}};
}

void from_json(const json& j, RoundMetrics& m) {
  j.at("task_id").get_to(m.task_id);
  j.at("round").get_to(m.round);
  m.accuracy = get_opt<double>(j, "accuracy");
  m.loss = get_opt<double>(j, "loss");
  m.round_time = j.value("round_time", 0.0);
  m.wall_time_s = j.value("wall_time_s", 0.0);
  m.bytes_up = j.value("bytes_up", std::uint64_t{0});
  m.bytes_down = j.value("bytes_down", std::uint64_t{0});
  m.selected = j.value("selected", std::vector<ClientId>{});
  m.timestamp_ms = j.value("timestamp_ms", std::int64_t{0});
}

void to_json(json& j, const ClientMetrics& m) {
  j = json{{"task_id", m.task_id},           {"round", m.round},
           {"client_id", m.client_id},       {"train_loss", m.train_loss},
           {"num_samples", m.num_samples},   {"train_time", m.train_time},
           {"upload_bytes", m.upload_bytes}, {"download_bytes", m.download_bytes},
           {"worker", opt(m.worker)}};
}

void from_json(const json& j, ClientMetrics& m) {
  j.at("task_id").get_to(m.task_id);
  j.at("round").get_to(m.round);
  j.at("client_id").get_to(m.client_id);
  m.train_loss = j.value("train_loss", 0.0);
  m.num_samples = j.value("num_samples", std::uint32_t{0});
  m.train_time = j.value("train_time", 0.0);
  m.upload_bytes = j.value("upload_bytes", std::uint64_t{0});
  m.download_bytes = j.value("download_bytes", std::uint64_t{0});
  m.worker = get_opt<std::uint32_t>(j, "worker");
}

double round_time_average(double t_total, std::uint32_t rounds) {
  if (rounds == 0) throw Error(ErrorCode::kInvalidArgument, "rounds must be positive");
  return t_total / static_cast<double>(rounds);
}

std::int64_t unix_millis() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

std::string make_task_id() {
  std::random_device rd;
  std::mt19937_64 gen((static_cast<std::uint64_t>(rd()) << 32) ^ rd() ^
                      static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count()));
  std::uint64_t hi = gen();
  std::uint64_t lo = gen();
  hi = (hi & 0xFFFFFFFFFFFF0FFFULL) | 0x0000000000004000ULL;  // version 4
  lo = (lo & 0x3FFFFFFFFFFFFFFFULL) | 0x8000000000000000ULL;  // RFC 4122 variant
  char buf[37];
  std::snprintf(buf, sizeof buf, "%08x-%04x-%04x-%04x-%012llx", static_cast<unsigned>(hi >> 32),
                static_cast<unsigned>((hi >> 16) & 0xFFFF), static_cast<unsigned>(hi & 0xFFFF),
                static_cast<unsigned>(lo >> 48), static_cast<unsigned long long>(lo & 0xFFFFFFFFFFFFULL));
  return buf;
}

TrackingStore::TrackingStore(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) throw Error(ErrorCode::kStorageIo, "cannot create tracking dir " + root_.string() + ": " + ec.message());
}

fs::path TrackingStore::task_dir(const std::string& task_id) const {
  if (!valid_task_id(task_id)) throw Error(ErrorCode::kInvalidArgument, "invalid task id '" + task_id + "'");
  return root_ / task_id;
}

TrackingStore::TaskIndex& TrackingStore::index_for(const std::string& task_id) {
  auto it = index_.find(task_id);
  if (it != index_.end()) return it->second;
  auto dir = task_dir(task_id);
  if (!fs::exists(dir / "task.json")) {
    throw Error(ErrorCode::kOrphanRecord, "no task record for '" + task_id + "'");
  }
  // Rebuild from disk so a restarted store keeps enforcing hierarchy.
  TaskIndex idx;
  for (const auto& j : read_lines(dir / "rounds.jsonl")) idx.rounds.insert(j.at("round").get<std::uint32_t>());
  return index_.emplace(task_id, std::move(idx)).first->second;
}

void TrackingStore::record(const TaskMetrics& m) {
  std::lock_guard lock(mu_);
  auto dir = task_dir(m.task_id);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kStorageIo, "cannot create " + dir.string());
  auto tmp = dir / "task.json.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(ErrorCode::kStorageIo, "cannot write " + tmp.string());
    out << json(m).dump(2) << '\n';
    out.flush();
    if (!out) throw Error(ErrorCode::kStorageIo, "write failed on " + tmp.string());
  }
  fs::rename(tmp, dir / "task.json", ec);
  if (ec) throw Error(ErrorCode::kStorageIo, "cannot commit task.json: " + ec.message());
  index_for(m.task_id);
}

void TrackingStore::record(const RoundMetrics& m) {
  std::lock_guard lock(mu_);
  auto& idx = index_for(m.task_id);
  if (idx.rounds.contains(m.round)) {
    throw Error(ErrorCode::kInvalidArgument, "round " + std::to_string(m.round) + " already recorded");
  }
  append_line(task_dir(m.task_id) / "rounds.jsonl", json(m));
  idx.rounds.insert(m.round);
}

void TrackingStore::record(const ClientMetrics& m) {
  std::lock_guard lock(mu_);
  auto& idx = index_for(m.task_id);
  if (!idx.rounds.contains(m.round)) {
    throw Error(ErrorCode::kOrphanRecord, "client record for unrecorded round " + std::to_string(m.round));
  }
  append_line(task_dir(m.task_id) / "clients.jsonl", json(m));
}

std::vector<json> TrackingStore::query(const std::string& task_id, TrackLevel level, const QueryFilter& filter) const {
  fs::path dir;
  try {
    dir = task_dir(task_id);
  } catch (const Error&) {
    throw Error(ErrorCode::kTaskNotFound, "task '" + task_id + "'");
  }
  std::lock_guard lock(mu_);
  if (!fs::exists(dir / "task.json")) throw Error(ErrorCode::kTaskNotFound, "task '" + task_id + "'");

  std::vector<json> records;
  switch (level) {
    case TrackLevel::kTask: {
      std::ifstream in(dir / "task.json");
      auto j = json::parse(in, nullptr, false);
      if (j.is_discarded()) throw Error(ErrorCode::kStorageIo, "corrupt task.json for '" + task_id + "'");
      records.push_back(std::move(j));
      return records;
    }
    case TrackLevel::kRound: records = read_lines(dir / "rounds.jsonl"); break;
    case TrackLevel::kClient: records = read_lines(dir / "clients.jsonl"); break;
  }
  std::vector<json> out;
  for (auto& r : records) {
    auto round = r.value("round", std::uint32_t{0});
    if (filter.round_eq && round != *filter.round_eq) continue;
    if (filter.round_lt && round >= *filter.round_lt) continue;
    if (filter.client_id && r.value("client_id", std::string{}) != *filter.client_id) continue;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::string> TrackingStore::task_ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(root_)) {
    if (entry.is_directory() && fs::exists(entry.path() / "task.json")) ids.push_back(entry.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace fedsim
