#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedsim/hetero.hpp"
#include "fedsim/scheduler.hpp"

namespace fedsim {

// Simulated-clock comparison of allocation strategies. Each seed draws a
// Dirichlet label-skewed, size-unbalanced partition, assigns speed ratios and
// runs `rounds` selections of K clients; every strategy sees the same
// selections and the same measured times.
struct SchedBenchSpec {
  std::size_t num_clients = 100;
  std::size_t clients_per_round = 20;
  std::vector<std::size_t> workers = {2, 4};
  std::size_t seeds = 100;
  std::uint64_t first_seed = 0;
  std::uint32_t rounds = 10;
  std::size_t num_classes = 10;
  std::size_t total_samples = 5000;
  double alpha = 0.5;
  double beta = 0.5;
  std::uint32_t epochs = 1;
  HeteroSpec hetero = [] {
    HeteroSpec h;
    h.enabled = true;
    h.throughput = 100.0;
    return h;
  }();
  double default_time = 1.0;
  double momentum = 0.5;
};

struct SchedBenchRow {
  std::string strategy;
  std::size_t workers = 0;
  std::uint64_t seed = 0;
  double makespan = 0.0;  // summed realized round makespans
  double speedup = 0.0;   // sequential total time / makespan
};

std::vector<SchedBenchRow> sched_bench(const SchedBenchSpec& spec);

}  // namespace fedsim
