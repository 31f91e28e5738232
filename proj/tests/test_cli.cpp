#include <doctest.h>

#include <csignal>
#include <cstdio>
#include <fstream>

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "helpers.hpp"

extern char** environ;

using nlohmann::json;
using fedsim::testing::TempDir;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

// Runs the binary through the shell; stderr is discarded.
Result run(const std::string& args, const std::string& env = "") {
  std::string cmd = env + " '" FEDSIM_BIN "' " + args + " 2>/dev/null";
  Result r;
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  while (auto n = std::fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
  int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::vector<json> json_lines(const std::string& s) {
  std::vector<json> out;
  std::istringstream in(s);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

// Long-running subcommand with its stdout on a pipe.
class Proc {
 public:
  explicit Proc(std::vector<std::string> args) {
    int fds[2];
    REQUIRE(::pipe(fds) == 0);
    posix_spawn_file_actions_t fa;
    posix_spawn_file_actions_init(&fa);
    posix_spawn_file_actions_adddup2(&fa, fds[1], 1);
    posix_spawn_file_actions_addclose(&fa, fds[0]);
    posix_spawn_file_actions_addopen(&fa, 2, "/dev/null", O_WRONLY, 0);
    args.insert(args.begin(), FEDSIM_BIN);
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    REQUIRE(::posix_spawn(&pid_, FEDSIM_BIN, &fa, nullptr, argv.data(), environ) == 0);
    posix_spawn_file_actions_destroy(&fa);
    ::close(fds[1]);
    out_ = ::fdopen(fds[0], "r");
  }
  ~Proc() {
    if (pid_ > 0) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
    }
    if (out_) std::fclose(out_);
  }
  json first_line() {
    char buf[4096];
    REQUIRE(std::fgets(buf, sizeof buf, out_) != nullptr);
    return json::parse(buf);
  }
  int terminate() {
    ::kill(pid_, SIGTERM);
    return wait();
  }
  int wait() {
    int status = 0;
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

 private:
  pid_t pid_ = -1;
  FILE* out_ = nullptr;
};

const std::string kSmall = "--set dataset.synthetic.total_samples=400 --set partition.num_clients=4 --rounds 3";

}  // namespace

TEST_CASE("run prints a JSON report and tracks it") {
  TempDir dir("cli");
  auto env = "FEDSIM_TRACK_DIR='" + (dir.path() / "trk").string() + "'";
  auto r = run("run " + kSmall, env);
  REQUIRE(r.code == 0);
  auto lines = json_lines(r.out);
  REQUIRE(lines.size() == 1);
  CHECK(lines[0]["rounds"] == 3);
  CHECK(lines[0]["final_accuracy"].is_number());
  auto id = lines[0]["task_id"].get<std::string>();

  auto listed = run("track", env);
  CHECK(listed.code == 0);
  CHECK(listed.out.find(id) != std::string::npos);
  auto rounds = run("track --task " + id, env);
  CHECK(rounds.code == 0);
  CHECK(json_lines(rounds.out).size() == 3);
  auto clients = run("track --task " + id + " --level client --round 1", env);
  CHECK(json_lines(clients.out).size() == 2);
  auto task = run("track --task " + id + " --level task", env);
  CHECK(json_lines(task.out).at(0)["finished"] == true);
}

TEST_CASE("usage errors exit with code 2") {
  TempDir dir("cli");
  auto env = "FEDSIM_TRACK_DIR='" + dir.path().string() + "'";
  CHECK(run("track --task nope", env).code == 2);
  CHECK(run("run --set momentum=1.5", env).code == 2);
  CHECK(run("run --set no_such_key=1", env).code == 2);
  CHECK(run("run --dataset /nonexistent/dir", env).code == 2);
  CHECK(run("bogus").code == 2);
  CHECK(run("").code == 2);
  CHECK(run("--help").code == 0);
}

TEST_CASE("a config file is layered under flags") {
  TempDir dir("cli");
  auto cfg = dir.path() / "c.json";
  std::ofstream(cfg) << R"({"rounds": 7, "seed": 4, "tracking_dir": ""})";
  auto r = run("run -c '" + cfg.string() + "' " + kSmall);
  REQUIRE(r.code == 0);
  CHECK(json_lines(r.out).at(0)["rounds"] == 3);
  auto same = run("run -c '" + cfg.string() + "' " + kSmall);
  CHECK(json_lines(same.out).at(0)["final_loss"] == json_lines(r.out).at(0)["final_loss"]);
}

TEST_CASE("partition writes a loadable dataset") {
  TempDir dir("cli");
  auto out = (dir.path() / "data").string();
  auto r = run("partition --set partition.scheme=dirichlet --set partition.alpha=0.5 -o '" + out + "'");
  REQUIRE(r.code == 0);
  auto info = json_lines(r.out).at(0);
  CHECK(info["clients"].get<int>() > 0);
  CHECK(std::filesystem::exists(dir.path() / "data" / "manifest.json"));
  auto trained = run("run --rounds 2 --tracking-dir '' --dataset '" + out + "' --set partition.scheme=realistic");
  CHECK(trained.code == 0);
}

TEST_CASE("sched-bench prints rows and summaries") {
  auto rows = run("sched-bench --seeds 2 --rounds 3 --workers 2");
  REQUIRE(rows.code == 0);
  std::istringstream in(rows.out);
  std::string header;
  std::getline(in, header);
  CHECK(header == "strategy,M,seed,makespan,speedup");
  int n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  CHECK(n == 6);
  auto sum = run("sched-bench --seeds 2 --rounds 3 --workers 2,4 --summary");
  REQUIRE(sum.code == 0);
  CHECK(sum.out.find("greedyada,4,") != std::string::npos);
}

TEST_CASE("registry, clients and server as separate processes") {
  TempDir dir("cli");
  auto data = (dir.path() / "data").string();
  REQUIRE(run("partition " + kSmall + " -o '" + data + "'").code == 0);
  auto trk = (dir.path() / "trk").string();

  Proc registry({"registry", "--port", "0"});
  auto reg_addr = registry.first_line()["registry"].get<std::string>();
  Proc tracking({"track", "--serve", "127.0.0.1:0", "--dir", trk});
  auto trk_addr = tracking.first_line()["tracking"].get<std::string>();

  std::vector<std::unique_ptr<Proc>> clients;
  for (const char* id : {"c000", "c001", "c002", "c003"}) {
    clients.push_back(std::make_unique<Proc>(std::vector<std::string>{
        "client", "--id", id, "--shard", data, "--registry", reg_addr}));
    CHECK(clients.back()->first_line()["client"] == id);
  }
  auto r = run("server --registry " + reg_addr + " --tracking-addr " + trk_addr + " --dataset '" + data +
               "' --set partition.scheme=realistic --rounds 3 --wait-timeout 10");
  REQUIRE(r.code == 0);
  auto report = json_lines(r.out).at(0);
  CHECK(report["final_accuracy"].is_number());
  for (auto& c : clients) CHECK(c->wait() == 0);
  CHECK(tracking.terminate() == 0);
  CHECK(registry.terminate() == 0);

  auto rounds = run("track --dir '" + trk + "' --task " + report["task_id"].get<std::string>());
  CHECK(json_lines(rounds.out).size() == 3);
}

TEST_CASE("shipped configs run from the CLI alone") {
  for (const char* name : {"convergence", "noniid", "distributed"}) {
    auto r = run(std::string("run --tracking-dir '' -c '") + FEDSIM_CONFIGS + "/" + name + ".json'");
    CHECK_MESSAGE(r.code == 0, name);
    CHECK(json_lines(r.out).at(0)["final_accuracy"].is_number());
  }
}
