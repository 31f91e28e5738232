#include <doctest.h>

#include <algorithm>
#include <map>

#include "fedsim/dataset.hpp"
#include "fedsim/hetero.hpp"
#include "helpers.hpp"

using namespace fedsim;
using fedsim::testing::code_of;

namespace {

std::vector<ClientId> ids(std::size_t n) {
  std::vector<ClientId> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_client_id(i, n));
  return out;
}

}  // namespace

TEST_CASE("disabled heterogeneity gives ratio 1") {
  HeteroSpec spec;
  auto profiles = assign_profiles(ids(20), spec);
  CHECK(profiles.size() == 20);
  for (const auto& [id, p] : profiles) {
    CHECK(p.speed_ratio == 1.0);
    CHECK_FALSE(p.profiled);
    CHECK(p.time == 0.0);
    CHECK(p.client_id == id);
  }
}

TEST_CASE("single ratio list applies to every client") {
  HeteroSpec spec;
  spec.enabled = true;
  spec.speed_ratios = {2.0};
  for (const auto& [id, p] : assign_profiles(ids(10), spec)) CHECK(p.speed_ratio == 2.0);
}

TEST_CASE("seeded assignment is reproducible and uses every ratio") {
  HeteroSpec spec;
  spec.enabled = true;
  spec.assignment_seed = 77;
  auto client_ids = ids(400);
  auto a = assign_profiles(client_ids, spec);
  auto b = assign_profiles(client_ids, spec);
  std::map<double, int> seen;
  for (const auto& [id, p] : a) {
    CHECK(b.at(id).speed_ratio == p.speed_ratio);
    ++seen[p.speed_ratio];
  }
  CHECK(seen.size() == 4);
  // Roughly uniform: each of 4 ratios near 100 of 400.
  for (auto [r, n] : seen) CHECK(n > 60);
  spec.assignment_seed = 78;
  auto c = assign_profiles(client_ids, spec);
  int same = 0;
  for (const auto& [id, p] : a) same += c.at(id).speed_ratio == p.speed_ratio;
  CHECK(same < 300);
}

TEST_CASE("simulated time is proportional to ratio and shard size") {
  HeteroSpec spec;
  ClientProfile unit{"c000", 1.0};
  ClientProfile slow{"c001", 3.0};
  CHECK(simulated_round_time(2.0, unit, spec) == 2.0);
  CHECK(simulated_round_time(2.0, slow, spec) == 6.0);
  CHECK(base_compute_time(200, 1, spec) == doctest::Approx(2 * base_compute_time(100, 1, spec)));
  CHECK(base_compute_time(100, 3, spec) == doctest::Approx(3 * base_compute_time(100, 1, spec)));
  CHECK(base_compute_time(10000, 1, spec) == doctest::Approx(1.0));
  CHECK(code_of([&] { simulated_round_time(-1.0, unit, spec); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("network delay is bounded and independent of call order") {
  HeteroSpec spec;
  spec.enabled = true;
  spec.network_delay = DelayRange{0.5, 1.5};
  double a = sample_network_delay(spec, "c001", 3);
  for (int r = 0; r < 50; ++r) {
    double d = sample_network_delay(spec, "c002", static_cast<std::uint32_t>(r));
    CHECK(d >= 0.5);
    CHECK(d <= 1.5);
  }
  CHECK(sample_network_delay(spec, "c001", 3) == a);
  CHECK(sample_network_delay(spec, "c001", 4) != a);
  ClientProfile p{"c001", 2.0};
  CHECK(simulated_round_time(1.0, p, spec, 3) == doctest::Approx(2.0 + a));
  spec.enabled = false;
  CHECK(sample_network_delay(spec, "c001", 3) == 0.0);
}

TEST_CASE("speed ratios widen the round-time spread") {
  auto pool = generate_synthetic({2, 2, 5000, 4.0}, 1);
  PartitionSpec ps;
  ps.num_clients = 50;
  ps.unbalanced_beta = 2.0;
  auto fd = partition(pool, ps);
  auto spread = [&](const HeteroSpec& spec) {
    auto profiles = assign_profiles(fd.client_ids(), spec);
    double lo = 1e300, hi = 0.0;
    for (const auto& [id, shard] : fd.clients) {
      double t = simulated_round_time(base_compute_time(shard.train.size(), 1, spec), profiles.at(id), spec);
      lo = std::min(lo, t);
      hi = std::max(hi, t);
    }
    return hi / lo;
  };
  HeteroSpec off;
  HeteroSpec on;
  on.enabled = true;
  on.speed_ratios = {1.0, 2.0, 3.0, 4.0};
  on.assignment_seed = 5;
  double size_only = [&] {
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& [id, s] : fd.clients) {
      lo = std::min(lo, s.train.size());
      hi = std::max(hi, s.train.size());
    }
    return static_cast<double>(hi) / static_cast<double>(lo);
  }();
  CHECK(spread(off) <= size_only + 1e-12);

  // Balanced shards isolate the device effect.
  ps.unbalanced_beta.reset();
  fd = partition(pool, ps);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    on.assignment_seed = seed;
    CHECK(spread(on) > spread(off));
  }
}

TEST_CASE("invalid hetero specs") {
  HeteroSpec spec;
  spec.speed_ratios = {};
  CHECK(code_of([&] { spec.validate(); }) == ErrorCode::kInvalidConfig);
  spec.speed_ratios = {1.0, 0.0};
  CHECK(code_of([&] { spec.validate(); }) == ErrorCode::kInvalidConfig);
  spec.speed_ratios = {1.0};
  spec.network_delay = DelayRange{2.0, 1.0};
  CHECK(code_of([&] { spec.validate(); }) == ErrorCode::kInvalidConfig);
  spec.network_delay.reset();
  spec.throughput = 0.0;
  CHECK(code_of([&] { spec.validate(); }) == ErrorCode::kInvalidConfig);
}
