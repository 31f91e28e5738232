#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "fedsim/dataset.hpp"
#include "helpers.hpp"

using namespace fedsim;
using fedsim::testing::code_of;
using fedsim::testing::TempDir;

namespace {

// Pool whose first feature is the sample index, so ownership can be traced.
SamplePool tagged_pool(std::size_t n, std::size_t classes, Rng& rng, bool skewed = false) {
  SamplePool p;
  p.num_classes = classes;
  p.feature_dim = 2;
  std::uniform_int_distribution<int> lab(0, static_cast<int>(classes) - 1);
  for (std::size_t i = 0; i < n; ++i) {
    // i < classes guarantees every class appears at least once.
    int label = i < classes ? static_cast<int>(i) : lab(rng);
    if (skewed && i >= classes && i % 3 != 0) label = 0;
    p.samples.push_back({{static_cast<float>(i), 0.5f}, static_cast<std::uint16_t>(label)});
  }
  return p;
}

std::vector<std::size_t> owned_indices(const ClientShard& s) {
  std::vector<std::size_t> out;
  for (const auto* part : {&s.train, &s.test}) {
    for (const auto& x : *part) out.push_back(static_cast<std::size_t>(x.features[0]));
  }
  return out;
}

void check_disjoint_cover(const FederatedDataset& fd, std::size_t n, const PartitionSpec& spec) {
  std::vector<int> hits(n, 0);
  for (const auto& [id, shard] : fd.clients) {
    CHECK_FALSE(shard.train.empty());
    auto expect_test = std::min(static_cast<std::size_t>(std::floor(spec.test_fraction * static_cast<double>(shard.size()))),
                                shard.size() - 1);
    CHECK(shard.test.size() == expect_test);
    for (auto i : owned_indices(shard)) {
      REQUIRE(i < n);
      ++hits[i];
    }
  }
  CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
}

std::set<int> labels_of(const ClientShard& s) {
  std::set<int> out;
  for (const auto* part : {&s.train, &s.test}) {
    for (const auto& x : *part) out.insert(x.label);
  }
  return out;
}

std::vector<double> histogram(const ClientShard& s, std::size_t classes) {
  std::vector<double> h(classes, 0.0);
  for (const auto* part : {&s.train, &s.test}) {
    for (const auto& x : *part) h[x.label] += 1.0;
  }
  double n = std::accumulate(h.begin(), h.end(), 0.0);
  for (auto& v : h) v /= n;
  return h;
}

}  // namespace

TEST_CASE("synthetic pool is balanced, deterministic and separable") {
  SyntheticSpec spec{3, 4, 3001, 4.0};
  auto a = generate_synthetic(spec, 9);
  auto b = generate_synthetic(spec, 9);
  CHECK(a.samples == b.samples);
  CHECK(a.samples != generate_synthetic(spec, 10).samples);
  std::vector<int> counts(3, 0);
  for (const auto& s : a.samples) ++counts[s.label];
  CHECK(counts == std::vector<int>{1001, 1000, 1000});

  // Nearest empirical mean as an independent classifier.
  auto two = generate_synthetic({2, 2, 4000, 4.0}, 1);
  std::vector<std::vector<double>> mean(2, std::vector<double>(2, 0.0));
  std::vector<double> n(2, 0.0);
  for (const auto& s : two.samples) {
    for (int k = 0; k < 2; ++k) mean[s.label][k] += s.features[k];
    n[s.label] += 1.0;
  }
  for (int c = 0; c < 2; ++c) {
    for (auto& v : mean[c]) v /= n[c];
  }
  // Class means are 4 apart.
  CHECK(std::hypot(mean[0][0] - mean[1][0], mean[0][1] - mean[1][1]) == doctest::Approx(4.0).epsilon(0.05));
  int correct = 0;
  for (const auto& s : two.samples) {
    double d0 = std::hypot(s.features[0] - mean[0][0], s.features[1] - mean[0][1]);
    double d1 = std::hypot(s.features[0] - mean[1][0], s.features[1] - mean[1][1]);
    correct += (d1 < d0 ? 1 : 0) == s.label;
  }
  CHECK(correct / 4000.0 >= 0.95);
}

TEST_CASE("client ids are zero padded") {
  CHECK(make_client_id(3, 100) == "c003");
  CHECK(make_client_id(7, 5) == "c007");
  CHECK(make_client_id(12, 5000) == "c0012");
}

TEST_CASE("dirichlet samples lie on the simplex") {
  Rng rng(4);
  for (double alpha : {0.05, 0.5, 1.0, 50.0}) {
    for (int i = 0; i < 50; ++i) {
      auto p = sample_dirichlet(alpha, 7, rng);
      CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0));
      for (double x : p) CHECK(x >= 0.0);
    }
  }
}

TEST_CASE("partitions are disjoint covers over random pools") {
  Rng rng(2024);
  std::uniform_int_distribution<int> classes_d(2, 6), clients_d(1, 12), size_d(40, 400), scheme_d(0, 2);
  std::uniform_real_distribution<double> alpha_d(0.1, 5.0), tf_d(0.0, 0.5);
  int cases = 0;
  while (cases < 600) {
    auto classes = static_cast<std::size_t>(classes_d(rng));
    auto n = static_cast<std::size_t>(size_d(rng));
    auto pool = tagged_pool(n, classes, rng, cases % 5 == 0);
    PartitionSpec spec;
    spec.scheme = static_cast<PartitionScheme>(scheme_d(rng));
    spec.num_clients = static_cast<std::size_t>(clients_d(rng));
    spec.alpha = alpha_d(rng);
    spec.classes_per_client = 1 + static_cast<std::size_t>(rng() % classes);
    spec.test_fraction = tf_d(rng);
    spec.seed = rng();
    if (cases % 2 == 1) spec.unbalanced_beta = alpha_d(rng);
    FederatedDataset fd;
    try {
      fd = partition(pool, spec);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kInfeasiblePartition);
      continue;
    }
    ++cases;
    CHECK(fd.clients.size() == spec.num_clients);
    check_disjoint_cover(fd, n, spec);
    if (spec.scheme == PartitionScheme::kClassPerClient) {
      for (const auto& [id, shard] : fd.clients) CHECK(labels_of(shard).size() == spec.classes_per_client);
    }
    CHECK(partition(pool, spec) == fd);
  }
}

TEST_CASE("class_per_client assigns labels round-robin") {
  Rng rng(1);
  auto pool = tagged_pool(1000, 10, rng);
  PartitionSpec spec;
  spec.scheme = PartitionScheme::kClassPerClient;
  spec.num_clients = 10;
  spec.classes_per_client = 2;
  auto fd = partition(pool, spec);
  std::size_t j = 0;
  for (const auto& [id, shard] : fd.clients) {
    CHECK(labels_of(shard) == std::set<int>{static_cast<int>((2 * j) % 10), static_cast<int>((2 * j + 1) % 10)});
    ++j;
  }
}

TEST_CASE("class_per_client rejects uncoverable label sets") {
  Rng rng(1);
  auto pool = tagged_pool(100, 10, rng);
  PartitionSpec spec;
  spec.scheme = PartitionScheme::kClassPerClient;
  spec.num_clients = 3;
  spec.classes_per_client = 2;
  CHECK(code_of([&] { partition(pool, spec); }) == ErrorCode::kInfeasiblePartition);
}

TEST_CASE("large alpha approaches the global label mix, small alpha skews it") {
  auto pool = generate_synthetic({4, 2, 40000, 4.0}, 3);
  auto global = std::vector<double>(4, 0.25);
  auto spread = [&](double alpha) {
    PartitionSpec spec;
    spec.scheme = PartitionScheme::kDirichlet;
    spec.num_clients = 5;
    spec.alpha = alpha;
    spec.seed = 17;
    auto fd = partition(pool, spec);
    double worst = 0.0;
    for (const auto& [id, shard] : fd.clients) {
      auto h = histogram(shard, 4);
      double l1 = 0.0;
      for (int c = 0; c < 4; ++c) l1 += std::fabs(h[c] - global[c]);
      worst = std::max(worst, l1);
    }
    return worst;
  };
  CHECK(spread(1000.0) <= 0.05);
  CHECK(spread(0.1) > 0.5);
}

TEST_CASE("unbalanced sizes vary; balanced iid sizes differ by at most one") {
  auto pool = generate_synthetic({10, 2, 5000, 4.0}, 3);
  PartitionSpec spec;
  spec.num_clients = 100;
  auto fd = partition(pool, spec);
  std::size_t lo = SIZE_MAX, hi = 0;
  for (const auto& [id, s] : fd.clients) {
    lo = std::min(lo, s.size());
    hi = std::max(hi, s.size());
  }
  CHECK(hi - lo <= 1);

  for (auto scheme : {PartitionScheme::kIid, PartitionScheme::kDirichlet}) {
    spec.scheme = scheme;
    spec.unbalanced_beta = 0.5;
    fd = partition(pool, spec);
    lo = SIZE_MAX;
    hi = 0;
    for (const auto& [id, s] : fd.clients) {
      lo = std::min(lo, s.size());
      hi = std::max(hi, s.size());
    }
    CHECK(lo >= 1);
    CHECK(hi > 4 * lo);
    CHECK(fd.total_samples() == 5000);
  }
}

TEST_CASE("realistic partition keeps the recorded owners") {
  auto pool = generate_synthetic({2, 2, 300, 4.0}, 5);
  PartitionSpec spec;
  spec.num_clients = 7;
  auto fd = partition(pool, spec);
  auto flat = flatten(fd);
  PartitionSpec real;
  real.scheme = PartitionScheme::kRealistic;
  real.test_fraction = 0.0;
  auto back = partition(flat, real);
  CHECK(back.client_ids() == fd.client_ids());
  for (const auto& [id, shard] : fd.clients) CHECK(back.clients.at(id).size() == shard.size());

  flat.owners.pop_back();
  CHECK(code_of([&] { partition(flat, real); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("partition argument errors") {
  Rng rng(1);
  auto pool = tagged_pool(20, 2, rng);
  PartitionSpec spec;
  spec.num_clients = 21;
  CHECK(code_of([&] { partition(pool, spec); }) == ErrorCode::kInfeasiblePartition);
  spec.num_clients = 0;
  CHECK(code_of([&] { partition(pool, spec); }) == ErrorCode::kInvalidConfig);
  spec.num_clients = 2;
  spec.test_fraction = 1.0;
  CHECK(code_of([&] { partition(pool, spec); }) == ErrorCode::kInvalidConfig);
  spec.test_fraction = 0.2;
  spec.scheme = PartitionScheme::kDirichlet;
  spec.alpha = 0.0;
  CHECK(code_of([&] { partition(pool, spec); }) == ErrorCode::kInvalidConfig);
  CHECK(code_of([&] { partition(SamplePool{}, PartitionSpec{}); }) == ErrorCode::kInvalidArgument);
}

namespace {

std::map<std::string, std::string> read_all(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    std::ifstream in(e.path(), std::ios::binary);
    out[e.path().filename().string()] = std::string(std::istreambuf_iterator<char>(in), {});
  }
  return out;
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

}  // namespace

TEST_CASE("dataset files round-trip byte for byte") {
  auto pool = generate_synthetic({3, 3, 500, 4.0}, 8);
  PartitionSpec spec;
  spec.num_clients = 6;
  spec.scheme = PartitionScheme::kDirichlet;
  auto fd = partition(pool, spec);
  TempDir a("ds"), b("ds");
  save_dataset(fd, a);
  auto loaded = load_dataset(a);
  CHECK(loaded == fd);
  save_dataset(loaded, b);
  CHECK(read_all(a) == read_all(b));

  auto info = read_manifest(a);
  CHECK(info.client_ids == fd.client_ids());
  CHECK(info.feature_dim == 3);
  auto id = fd.client_ids()[2];
  CHECK(load_client_shard(a.path(), id) == fd.clients.at(id));
  CHECK(load_client_shard(a.path() / (id + ".bin"), "ignored") == fd.clients.at(id));
  CHECK(code_of([&] { load_client_shard(a.path(), "nobody"); }) == ErrorCode::kUnknownClient);
}

TEST_CASE("dataset loading errors") {
  TempDir dir("bad");
  CHECK(code_of([&] { load_dataset(dir.path()); }) == ErrorCode::kDatasetNotFound);

  auto pool = generate_synthetic({2, 2, 100, 4.0}, 8);
  PartitionSpec spec;
  spec.num_clients = 2;
  save_dataset(partition(pool, spec), dir);
  auto manifest_path = dir.path() / "manifest.json";
  std::ifstream in(manifest_path);
  auto manifest = nlohmann::json::parse(in);
  in.close();

  auto with = [&](auto edit) {
    auto m = manifest;
    edit(m);
    write_text(manifest_path, m.dump());
    return code_of([&] { load_dataset(dir.path()); });
  };
  CHECK(with([](auto& m) { m["format_version"] = 2; }) == ErrorCode::kUnknownFormatVersion);
  CHECK(with([](auto& m) { m.erase("num_classes"); }) == ErrorCode::kMalformedManifest);
  CHECK(with([](auto& m) { m["clients"][0]["shard"] = "../x.bin"; }) == ErrorCode::kMalformedManifest);
  CHECK(with([](auto& m) { m["clients"][0]["num_samples"] = 1000; }) == ErrorCode::kMalformedManifest);
  CHECK(with([](auto& m) { m["clients"][1]["id"] = m["clients"][0]["id"]; }) == ErrorCode::kMalformedManifest);
  CHECK(with([](auto& m) { m["feature_dim"] = 5; }) == ErrorCode::kShapeMismatch);
  CHECK(with([](auto& m) { m["clients"][0]["shard"] = "missing.bin"; }) == ErrorCode::kMalformedManifest);
  write_text(manifest_path, "{ not json");
  CHECK(code_of([&] { load_dataset(dir.path()); }) == ErrorCode::kMalformedManifest);
}
