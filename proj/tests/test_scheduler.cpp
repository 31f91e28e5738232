#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "fedsim/bench.hpp"
#include "fedsim/dataset.hpp"
#include "fedsim/scheduler.hpp"
#include "helpers.hpp"

using namespace fedsim;
using fedsim::testing::code_of;

namespace {

std::vector<ClientProfile> profiled(const std::vector<double>& times) {
  std::vector<ClientProfile> out;
  for (std::size_t i = 0; i < times.size(); ++i) {
    ClientProfile p{make_client_id(i, times.size())};
    p.time = times[i];
    p.profiled = true;
    out.push_back(p);
  }
  return out;
}

std::map<ClientId, double> time_map(const std::vector<ClientProfile>& ps) {
  std::map<ClientId, double> m;
  for (const auto& p : ps) m[p.client_id] = p.time;
  return m;
}

// Independent oracle: enumerate every assignment as a base-M counter.
double enumerate_optimum(const std::vector<double>& times, std::size_t m) {
  std::size_t total = 1;
  for (std::size_t i = 0; i < times.size(); ++i) total *= m;
  double best = 1e300;
  std::vector<double> loads(m);
  for (std::size_t code = 0; code < total; ++code) {
    std::fill(loads.begin(), loads.end(), 0.0);
    std::size_t c = code;
    for (double t : times) {
      loads[c % m] += t;
      c /= m;
    }
    best = std::min(best, *std::max_element(loads.begin(), loads.end()));
  }
  return best;
}

void check_cover(const Allocation& a, const std::vector<ClientProfile>& ps, std::size_t m) {
  REQUIRE(a.num_workers() == m);
  REQUIRE(a.loads.size() == m);
  std::multiset<ClientId> got;
  for (const auto& g : a.groups) got.insert(g.begin(), g.end());
  std::multiset<ClientId> want;
  for (const auto& p : ps) want.insert(p.client_id);
  CHECK(got == want);
  auto times = time_map(ps);
  for (std::size_t w = 0; w < m; ++w) {
    double sum = 0.0;
    for (const auto& id : a.groups[w]) sum += times.at(id);
    CHECK(a.loads[w] == doctest::Approx(sum));
  }
}

}  // namespace

TEST_CASE("greedy examples") {
  SchedulerState st;
  auto a = profiled({5, 4, 3, 3, 2, 2});
  CHECK(makespan(greedy_allocate(a, 2, st)) == 10.0);
  CHECK(brute_force_optimal(std::vector<double>{5, 4, 3, 3, 2, 2}, 2) == 10.0);

  auto tight = profiled({3, 3, 2, 2, 2});
  double lpt = makespan(greedy_allocate(tight, 2, st));
  double opt = brute_force_optimal(std::vector<double>{3, 3, 2, 2, 2}, 2);
  CHECK(lpt == 7.0);
  CHECK(opt == 6.0);
  CHECK(lpt / opt == doctest::Approx(lpt_bound(2)));

  auto equal = profiled({2, 2, 2});
  auto e = greedy_allocate(equal, 3, st);
  for (const auto& g : e.groups) CHECK(g.size() == 1);
  CHECK(makespan(e) == 2.0);
}

TEST_CASE("greedy tie-breaks are fixed") {
  SchedulerState st;
  auto ps = profiled({1, 1, 1, 1});
  auto a = greedy_allocate(ps, 2, st);
  CHECK(a.groups[0] == std::vector<ClientId>{"c000", "c002"});
  CHECK(a.groups[1] == std::vector<ClientId>{"c001", "c003"});
}

TEST_CASE("makespan examples") {
  CHECK(makespan(Allocation{{{"a"}, {}}, {3.0, 0.0}}) == 3.0);
  CHECK(makespan(Allocation{{{"a"}, {"b"}}, {10.0, 9.0}}) == 10.0);
  SchedulerState st;
  auto ps = profiled({1, 2, 3.5});
  CHECK(makespan(greedy_allocate(ps, 1, st)) == 6.5);
}

TEST_CASE("unprofiled clients use the default time") {
  SchedulerState st;
  st.default_time = 2.5;
  std::vector<ClientProfile> ps{{"a"}, {"b"}, {"c"}};
  auto a = greedy_allocate(ps, 2, st);
  CHECK(a.loads == std::vector<double>{5.0, 2.5});
  CHECK(effective_time(ps[0], st) == 2.5);
}

TEST_CASE("slowest and random baselines") {
  SchedulerState st;
  Rng rng(1);
  auto ps = profiled({5, 4, 3, 3});
  auto s = baseline_allocate(ps, 2, SchedulerKind::kSlowest, st, rng);
  CHECK(s.groups[0] == std::vector<ClientId>{"c000", "c001"});
  CHECK(s.groups[1] == std::vector<ClientId>{"c002", "c003"});
  CHECK(makespan(s) == 9.0);

  auto r = baseline_allocate(ps, 1, SchedulerKind::kRandom, st, rng);
  CHECK(makespan(r) == makespan(greedy_allocate(ps, 1, st)));
  CHECK(code_of([&] { baseline_allocate(ps, 2, SchedulerKind::kGreedyAda, st, rng); }) ==
        ErrorCode::kInvalidArgument);

  // Random deals round-robin: group sizes differ by at most one.
  auto many = profiled(std::vector<double>(11, 1.0));
  auto d = baseline_allocate(many, 3, SchedulerKind::kRandom, st, rng);
  for (const auto& g : d.groups) CHECK((g.size() == 3 || g.size() == 4));
}

TEST_CASE("LPT bound and cover over random instances") {
  Rng rng(31337);
  std::uniform_int_distribution<int> k_d(1, 10), m_d(2, 3);
  std::uniform_real_distribution<double> t_d(0.1, 10.0);
  std::uniform_int_distribution<int> int_t(1, 6);
  SchedulerState st;
  for (int i = 0; i < 1500; ++i) {
    auto k = static_cast<std::size_t>(k_d(rng));
    auto m = static_cast<std::size_t>(m_d(rng));
    std::vector<double> times(k);
    for (auto& t : times) t = i % 2 ? t_d(rng) : int_t(rng);
    auto ps = profiled(times);
    auto g = greedy_allocate(ps, m, st);
    check_cover(g, ps, m);
    double opt = enumerate_optimum(times, m);
    CHECK(brute_force_optimal(times, m) == doctest::Approx(opt));
    CHECK(makespan(g) <= lpt_bound(m) * opt + 1e-9);
    CHECK(makespan(g) >= opt - 1e-9);

    auto s = baseline_allocate(ps, m, SchedulerKind::kSlowest, st, rng);
    check_cover(s, ps, m);
    CHECK(makespan(g) <= makespan(s) + 1e-9);
    check_cover(baseline_allocate(ps, m, SchedulerKind::kRandom, st, rng), ps, m);
  }
}

TEST_CASE("brute force limits") {
  CHECK(brute_force_optimal(std::vector<double>{1.0}, 2) == 1.0);
  CHECK(brute_force_optimal(std::vector<double>(12, 1.0), 3) == 4.0);
  CHECK(code_of([] { brute_force_optimal(std::vector<double>(13, 1.0), 3); }) == ErrorCode::kInstanceTooLarge);
  CHECK(code_of([] { brute_force_optimal(std::vector<double>{1.0}, 0); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("adaptive profiling") {
  SchedulerState st;
  st.default_time = 4.0;
  st.momentum = 0.5;
  std::vector<ClientProfile> ps{{"a"}, {"b"}};
  auto a = greedy_allocate(ps, 2, st);
  adaptive_profile(a, {{"a", 1.0}, {"b", 3.0}}, st);
  CHECK(st.default_time == 3.0);
  CHECK(st.profiles.at("a").profiled);
  CHECK(st.profiles.at("b").time == 3.0);

  SchedulerState one;
  one.default_time = 100.0;
  one.momentum = 1.0;
  adaptive_profile(a, {{"a", 1.0}, {"b", 2.0}}, one);
  CHECK(one.default_time == 1.5);

  SchedulerState zero;
  zero.default_time = 7.0;
  zero.momentum = 0.0;
  adaptive_profile(a, {{"a", 1.0}}, zero);
  CHECK(zero.default_time == 7.0);
  CHECK(zero.profiles.at("a").profiled);

  CHECK(code_of([&] { adaptive_profile(a, {{"zzz", 1.0}}, st); }) == ErrorCode::kUnknownClient);
}

TEST_CASE("realized makespan uses actual times") {
  Allocation a{{{"a", "b"}, {"c"}}, {2.0, 1.0}};
  CHECK(realized_makespan(a, {{"a", 1.0}, {"b", 1.0}, {"c", 5.0}}) == 5.0);
  CHECK(code_of([&] { realized_makespan(a, {{"a", 1.0}}); }) == ErrorCode::kUnknownClient);
}

TEST_CASE("sched bench orders the strategies") {
  SchedBenchSpec spec;
  spec.seeds = 10;
  auto rows = sched_bench(spec);
  CHECK(rows.size() == 3 * 2 * 10);
  std::map<std::pair<std::size_t, std::uint64_t>, std::map<std::string, double>> by;
  for (const auto& r : rows) by[{r.workers, r.seed}][r.strategy] = r.makespan;
  for (auto& [key, v] : by) CHECK(v.at("greedyada") <= v.at("slowest") + 1e-9);
  CHECK(sched_bench(spec).front().makespan == rows.front().makespan);
}
