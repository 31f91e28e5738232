#pragma once

#include <map>
#include <span>
#include <vector>

#include "fedsim/hetero.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

// Selected clients split across M workers, with the per-worker load the
// allocator believed it was assigning.
struct Allocation {
  std::vector<std::vector<ClientId>> groups;
  std::vector<double> loads;

  std::size_t num_workers() const { return groups.size(); }
};

struct SchedulerState {
  double default_time = 1.0;  // t: stand-in for unprofiled clients
  double momentum = 0.5;      // m: weight of the newest round mean
  ProfileMap profiles;
};

enum class SchedulerKind { kGreedyAda, kRandom, kSlowest };

// Profiled clients use their recorded time, others the state default.
double effective_time(const ClientProfile& profile, const SchedulerState& state);

// Longest-processing-time-first: visit clients by descending effective time
// (ties: lower client id) and append each to the least-loaded worker (ties:
// lower worker index).
Allocation greedy_allocate(std::span<const ClientProfile> selected, std::size_t num_workers,
                           const SchedulerState& state);

// random: seeded shuffle dealt round-robin. slowest: descending effective
// time, the first ceil(K/M) to worker 0, the next ceil(K/M) to worker 1, ...
Allocation baseline_allocate(std::span<const ClientProfile> selected, std::size_t num_workers, SchedulerKind kind,
                             const SchedulerState& state, Rng& rng);

// Dispatches to greedy_allocate or baseline_allocate.
Allocation allocate(std::span<const ClientProfile> selected, std::size_t num_workers, SchedulerKind kind,
                    const SchedulerState& state, Rng& rng);

double makespan(const Allocation& alloc);

// Makespan of the given grouping under the actual per-client times.
double realized_makespan(const Allocation& alloc, const std::map<ClientId, double>& actual_times);

// Records each measured time on its profile (profiled = true) and moves the
// default time toward this round's mean: t = mean * m + t * (1 - m).
// Throws kUnknownClient for a measured client absent from the allocation.
void adaptive_profile(const Allocation& alloc, const std::map<ClientId, double>& measured, SchedulerState& state);

// Exhaustive minimum makespan. Throws kInstanceTooLarge when
// num_workers^times.size() exceeds 3^12.
double brute_force_optimal(std::span<const double> times, std::size_t num_workers);

// Graham's worst-case ratio for list scheduling in LPT order: 4/3 - 1/(3M).
constexpr double lpt_bound(std::size_t num_workers) {
  return 4.0 / 3.0 - 1.0 / (3.0 * static_cast<double>(num_workers));
}

}  // namespace fedsim
