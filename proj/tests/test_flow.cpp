#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "fedsim/flow.hpp"
#include "helpers.hpp"

using namespace fedsim;
using fedsim::testing::code_of;

namespace {

struct Env {
  std::shared_ptr<const FederatedDataset> data;
  std::shared_ptr<const Model> model;
  HeteroSpec hetero;
  ProfileMap profiles;

  explicit Env(std::size_t clients = 12, bool hetero_on = true) {
    auto pool = generate_synthetic({2, 2, 1200, 4.0}, 4);
    PartitionSpec ps;
    ps.num_clients = clients;
    ps.unbalanced_beta = 1.0;
    data = std::make_shared<const FederatedDataset>(partition(pool, ps));
    model = make_model({ModelKind::kLogReg, 2, 2, 0});
    hetero.enabled = hetero_on;
    hetero.assignment_seed = 3;
    hetero.throughput = 100.0;
    profiles = assign_profiles(data->client_ids(), hetero);
  }

  FlowEngine::Hooks hooks() const {
    FlowEngine::Hooks h;
    h.available_clients = [d = data] { return d->client_ids(); };
    auto test = std::make_shared<std::vector<Sample>>(data->global_test());
    h.evaluate = [m = model, test](const ParamVector& p) -> std::optional<Evaluation> { return evaluate(*m, p, *test); };
    return h;
  }
};

FlowSettings settings(std::size_t workers, std::uint32_t rounds = 4) {
  FlowSettings s;
  s.seed = 21;
  s.rounds = rounds;
  s.clients_per_round = 5;
  s.workers = workers;
  return s;
}

TaskReport run(const Env& env, const FlowSettings& s, ServerStages server = {}, ClientStages client = {},
               MetricsSink* sink = nullptr) {
  LocalExecutor exec(env.data, env.model, env.hetero, env.profiles, s.workers);
  FlowEngine engine(s, env.model->init_params(1), std::move(server), std::move(client), exec, env.hooks(), sink);
  return engine.run_task();
}

// Executor that forwards to a real one and drops the listed clients.
class DroppingExecutor final : public Executor {
 public:
  DroppingExecutor(Executor& inner, std::set<ClientId> dead) : inner_(inner), dead_(std::move(dead)) {}
  std::vector<ClientOutcome> execute(const RoundPlan& plan, const ClientStages& stages) override {
    auto all = inner_.execute(plan, stages);
    std::erase_if(all, [&](const ClientOutcome& o) { return dead_.contains(o.update.client_id); });
    return all;
  }

 private:
  Executor& inner_;
  std::set<ClientId> dead_;
};

}  // namespace

TEST_CASE("aggregate matches a long double weighted mean") {
  Rng rng(17);
  std::uniform_real_distribution<double> w(1.0, 500.0);
  auto layout = testing::small_layout();
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<WeightedUpdate> ups;
    int n = 1 + trial % 9;
    for (int i = 0; i < n; ++i) ups.push_back({testing::random_params(layout, rng, 3.0f), std::floor(w(rng))});
    auto got = aggregate(ups);
    for (std::size_t j = 0; j < got.size(); ++j) {
      long double num = 0, den = 0;
      for (const auto& u : ups) {
        num += static_cast<long double>(u.weight) * u.params.values()[j];
        den += u.weight;
      }
      float want = static_cast<float>(num / den);
      float g = got.values()[j];
      // Same value or adjacent floats.
      CHECK((g == want || std::nextafter(g, want) == want));
    }
  }
}

TEST_CASE("aggregate of one update is that update") {
  Rng rng(1);
  auto p = testing::random_params(testing::small_layout(), rng);
  std::vector<WeightedUpdate> one{{p, 7.0}};
  CHECK(bit_identical(aggregate(one), p));
}

TEST_CASE("aggregate errors") {
  Rng rng(1);
  auto a = testing::random_params(testing::small_layout(), rng);
  auto b = testing::random_params({{"x", {8}}}, rng);
  std::vector<WeightedUpdate> mixed{{a, 1.0}, {b, 1.0}};
  CHECK(code_of([&] { aggregate(mixed); }) == ErrorCode::kLayoutMismatch);
  std::vector<WeightedUpdate> zero{{a, 0.0}};
  CHECK(code_of([&] { aggregate(zero); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { aggregate({}); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("selection draws distinct clients uniformly") {
  std::vector<ClientId> ids;
  for (int i = 0; i < 10; ++i) ids.push_back(make_client_id(static_cast<std::size_t>(i), 10));
  Rng rng(5);
  std::map<ClientId, int> hits;
  for (int i = 0; i < 5000; ++i) {
    auto s = select_clients(ids, 3, rng);
    CHECK(std::set<ClientId>(s.begin(), s.end()).size() == 3);
    for (const auto& id : s) ++hits[id];
  }
  // Expected 1500 each.
  for (const auto& [id, n] : hits) CHECK(std::abs(n - 1500) < 150);
  Rng a(9), b(9);
  CHECK(select_clients(ids, 4, a) == select_clients(ids, 4, b));
  CHECK(code_of([&] { select_clients(ids, 11, a); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { select_clients(ids, 0, a); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("clients per round resolution") {
  FlowSettings s;
  s.clients_per_round = 5;
  CHECK(s.resolve_k(100) == 5);
  CHECK(s.resolve_k(3) == 3);
  s.clients_per_round.reset();
  s.client_fraction = 0.1;
  CHECK(s.resolve_k(100) == 10);
  CHECK(s.resolve_k(4) == 1);
  s.client_fraction.reset();
  CHECK(s.resolve_k(7) == 7);
}

TEST_CASE("standalone runs are bit-reproducible") {
  Env env;
  auto a = run(env, settings(1));
  auto b = run(env, settings(1));
  CHECK(bit_identical(a.final_params, b.final_params));
  CHECK(a.round_times == b.round_times);
  auto other = settings(1);
  other.seed = 22;
  CHECK_FALSE(bit_identical(run(env, other).final_params, a.final_params));
}

TEST_CASE("distributed workers reach the standalone parameters") {
  Env env;
  auto solo = run(env, settings(1));
  for (std::size_t m : {2u, 3u, 5u}) {
    auto dist = run(env, settings(m));
    CHECK(bit_identical(dist.final_params, solo.final_params));
    for (std::size_t r = 0; r < solo.round_times.size(); ++r) CHECK(dist.round_times[r] <= solo.round_times[r] + 1e-12);
  }
}

TEST_CASE("round time is the per-worker maximum of summed client times") {
  Env env;
  for (std::size_t m : {1u, 2u, 3u}) {
    auto s = settings(m, 1);
    LocalExecutor exec(env.data, env.model, env.hetero, env.profiles, m);
    FlowEngine engine(s, env.model->init_params(1), {}, {}, exec, env.hooks(), nullptr);
    auto r = engine.run_round();
    std::map<std::uint32_t, double> sums;
    for (const auto& o : r.outcomes) {
      const auto& shard = env.data->clients.at(o.update.client_id);
      double t = base_compute_time(shard.train.size(), 1, env.hetero) * env.profiles.at(o.update.client_id).speed_ratio;
      CHECK(o.time == doctest::Approx(t));
      sums[o.worker] += o.time;
    }
    double longest = 0.0;
    for (auto [w, t] : sums) longest = std::max(longest, t);
    CHECK(r.round_time == doctest::Approx(longest));
    if (m == 1) CHECK(sums.size() == 1);
  }
}

TEST_CASE("every selected client is profiled after a round") {
  Env env;
  auto s = settings(2, 1);
  s.scheduler_momentum = 1.0;
  LocalExecutor exec(env.data, env.model, env.hetero, env.profiles, 2);
  FlowEngine engine(s, env.model->init_params(1), {}, {}, exec, env.hooks(), nullptr);
  auto r = engine.run_round();
  double sum = 0.0;
  for (const auto& id : r.selected) {
    CHECK(engine.scheduler_state().profiles.at(id).profiled);
    sum += engine.scheduler_state().profiles.at(id).time;
  }
  CHECK(engine.scheduler_state().default_time == doctest::Approx(sum / static_cast<double>(r.selected.size())));
}

TEST_CASE("stage overrides replace only their stage") {
  Env env;
  std::vector<ClientId> picked;
  ServerStages server;
  server.selection = [&](std::span<const ClientId> available, std::size_t k, Rng&) {
    std::vector<ClientId> out(available.begin(), available.begin() + static_cast<std::ptrdiff_t>(k));
    picked = out;
    return out;
  };
  auto s = settings(1, 1);
  LocalExecutor exec(env.data, env.model, env.hetero, env.profiles, 1);
  FlowEngine engine(s, env.model->init_params(1), server, {}, exec, env.hooks(), nullptr);
  auto r = engine.run_round();
  CHECK(r.selected == picked);
  CHECK(r.selected.front() == "c000");

  // Train stage returning a constant model: the global becomes that model.
  ClientStages client;
  auto fixed = ParamVector(env.model->layout(), {1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f});
  client.train = [&](const ParamVector&, const ClientContext& ctx) {
    return TrainResult{fixed, 0.5, static_cast<std::uint32_t>(ctx.train.size())};
  };
  auto rep = run(env, settings(1, 2), {}, client);
  CHECK(bit_identical(rep.final_params, fixed));

  // Aggregation override sees one update per completed client.
  std::size_t seen = 0;
  ServerStages agg;
  agg.aggregation = [&](std::span<const WeightedUpdate> ups) {
    seen = ups.size();
    return aggregate(ups);
  };
  run(env, settings(1, 1), agg);
  CHECK(seen == 5);
}

TEST_CASE("topk uploads are deltas against the received model") {
  Env env;
  auto s = settings(1, 3);
  auto exact = run(env, s);
  auto near = run(env, s, {}, default_client_stages(CompressionSpec::topk(1.0)));
  for (std::size_t i = 0; i < exact.final_params.size(); ++i) {
    CHECK(near.final_params.values()[i] == doctest::Approx(exact.final_params.values()[i]).epsilon(1e-4));
  }
  auto sparse = run(env, s, {}, default_client_stages(CompressionSpec::topk(0.5)));
  CHECK(sparse.final_accuracy.has_value());
}

TEST_CASE("quorum and failure handling") {
  Env env;
  auto s = settings(1, 2);
  s.min_clients = 5;
  LocalExecutor inner(env.data, env.model, env.hetero, env.profiles, 1);
  DroppingExecutor drop_one(inner, {"c000", "c001", "c002", "c003", "c004", "c005"});
  FlowEngine engine(s, env.model->init_params(1), {}, {}, drop_one, env.hooks(), nullptr);
  CHECK(code_of([&] { engine.run_round(); }) == ErrorCode::kQuorumLost);

  std::set<ClientId> everyone;
  for (const auto& id : env.data->client_ids()) everyone.insert(id);
  DroppingExecutor drop_all(inner, everyone);
  s.min_clients = 1;
  FlowEngine none(s, env.model->init_params(1), {}, {}, drop_all, env.hooks(), nullptr);
  CHECK(code_of([&] { none.run_round(); }) == ErrorCode::kQuorumLost);

  // Partial drops still aggregate the survivors.
  DroppingExecutor drop_some(inner, {"c000", "c001", "c002"});
  FlowEngine some(s, env.model->init_params(1), {}, {}, drop_some, env.hooks(), nullptr);
  for (int i = 0; i < 3; ++i) {
    auto r = some.run_round();
    for (const auto& o : r.outcomes) CHECK(o.update.client_id > "c002");
  }

  FlowEngine::Hooks few;
  few.available_clients = [] { return std::vector<ClientId>{"c000"}; };
  s.min_clients = 2;
  FlowEngine starved(s, env.model->init_params(1), {}, {}, inner, few, nullptr);
  CHECK(code_of([&] { starved.run_round(); }) == ErrorCode::kQuorumLost);
}

TEST_CASE("diverging and failing clients") {
  Env env;
  ClientStages nan_train;
  nan_train.train = [&](const ParamVector& p, const ClientContext& ctx) {
    auto bad = p;
    bad.values()[0] = std::nanf("");
    return TrainResult{bad, 0.0, static_cast<std::uint32_t>(ctx.train.size())};
  };
  CHECK(code_of([&] { run(env, settings(1, 1), {}, nan_train); }) == ErrorCode::kTrainingDiverged);

  ClientStages throwing;
  throwing.train = [](const ParamVector&, const ClientContext&) -> TrainResult { throw std::runtime_error("boom"); };
  CHECK(code_of([&] { run(env, settings(2, 1), {}, throwing); }) == ErrorCode::kWorkerFailure);

  FlowSettings bad = settings(1, 1);
  bad.rounds = 0;
  LocalExecutor exec(env.data, env.model, env.hetero, env.profiles, 1);
  CHECK(code_of([&] { FlowEngine(bad, env.model->init_params(1), {}, {}, exec, env.hooks(), nullptr); }) ==
        ErrorCode::kInvalidConfig);
}

TEST_CASE("task report totals") {
  Env env;
  auto s = settings(2, 6);
  s.eval_interval = 4;
  auto rep = run(env, s);
  CHECK(rep.rounds == 6);
  CHECK(rep.round_times.size() == 6);
  double sum = 0.0;
  for (double t : rep.round_times) sum += t;
  CHECK(rep.t_total == sum);
  CHECK(rep.t_round == rep.t_total / 6.0);
  // Evaluated at round 3 (interval) and round 5 (last).
  REQUIRE(rep.accuracy_curve.size() == 2);
  CHECK(rep.accuracy_curve[0].first == 3);
  CHECK(rep.accuracy_curve[1].first == 5);
  CHECK(*rep.final_accuracy > 0.9);
}

TEST_CASE("client seed is independent of transport") {
  CHECK(client_train_seed(1, 2, "c003") == client_train_seed(1, 2, "c003"));
  CHECK(client_train_seed(1, 2, "c003") != client_train_seed(1, 3, "c003"));
  CHECK(client_train_seed(1, 2, "c003") != client_train_seed(1, 2, "c004"));
}
