#include "fedsim/scheduler.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <set>

#include "fedsim/error.hpp"

namespace fedsim {

namespace {

void check_inputs(std::span<const ClientProfile> selected, std::size_t num_workers) {
  if (selected.empty()) throw Error(ErrorCode::kInvalidArgument, "no clients to allocate");
  if (num_workers == 0) throw Error(ErrorCode::kInvalidArgument, "need at least one worker");
}

std::vector<std::size_t> by_descending_time(std::span<const ClientProfile> selected, const SchedulerState& state) {
  std::vector<std::size_t> order(selected.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    double ta = effective_time(selected[a], state);
    double tb = effective_time(selected[b], state);
    if (ta != tb) return ta > tb;
    return selected[a].client_id < selected[b].client_id;
  });
  return order;
}

Allocation empty_allocation(std::size_t num_workers) {
  return Allocation{std::vector<std::vector<ClientId>>(num_workers), std::vector<double>(num_workers, 0.0)};
}

void place(Allocation& alloc, std::size_t worker, const ClientProfile& c, const SchedulerState& state) {
  alloc.groups[worker].push_back(c.client_id);
  alloc.loads[worker] += effective_time(c, state);
}

}  // namespace

double effective_time(const ClientProfile& profile, const SchedulerState& state) {
  return profile.profiled ? profile.time : state.default_time;
}

Allocation greedy_allocate(std::span<const ClientProfile> selected, std::size_t num_workers,
                           const SchedulerState& state) {
  check_inputs(selected, num_workers);
  auto alloc = empty_allocation(num_workers);
  for (auto i : by_descending_time(selected, state)) {
    // min_element returns the first minimum, i.e. the lowest worker index.
    auto worker = static_cast<std::size_t>(std::min_element(alloc.loads.begin(), alloc.loads.end()) -
                                           alloc.loads.begin());
    place(alloc, worker, selected[i], state);
  }
  return alloc;
}

Allocation baseline_allocate(std::span<const ClientProfile> selected, std::size_t num_workers, SchedulerKind kind,
                             const SchedulerState& state, Rng& rng) {
  check_inputs(selected, num_workers);
  auto alloc = empty_allocation(num_workers);
  switch (kind) {
    case SchedulerKind::kRandom: {
      std::vector<std::size_t> order(selected.size());
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t k = 0; k < order.size(); ++k) place(alloc, k % num_workers, selected[order[k]], state);
      break;
    }
    case SchedulerKind::kSlowest: {
      const std::size_t per_worker = (selected.size() + num_workers - 1) / num_workers;
      auto order = by_descending_time(selected, state);
      for (std::size_t k = 0; k < order.size(); ++k) place(alloc, k / per_worker, selected[order[k]], state);
      break;
    }
    case SchedulerKind::kGreedyAda:
      throw Error(ErrorCode::kInvalidArgument, "greedyada is not a baseline strategy");
  }
  return alloc;
}

Allocation allocate(std::span<const ClientProfile> selected, std::size_t num_workers, SchedulerKind kind,
                    const SchedulerState& state, Rng& rng) {
  if (kind == SchedulerKind::kGreedyAda) return greedy_allocate(selected, num_workers, state);
  return baseline_allocate(selected, num_workers, kind, state, rng);
}

double makespan(const Allocation& alloc) {
  double m = 0.0;
  for (double l : alloc.loads) m = std::max(m, l);
  return m;
}

double realized_makespan(const Allocation& alloc, const std::map<ClientId, double>& actual_times) {
  double m = 0.0;
  for (const auto& group : alloc.groups) {
    double load = 0.0;
    for (const auto& id : group) {
      auto it = actual_times.find(id);
      if (it == actual_times.end()) throw Error(ErrorCode::kUnknownClient, "no time for client '" + id + "'");
      load += it->second;
    }
    m = std::max(m, load);
  }
  return m;
}

void adaptive_profile(const Allocation& alloc, const std::map<ClientId, double>& measured, SchedulerState& state) {
  std::set<ClientId> allocated;
  for (const auto& g : alloc.groups) allocated.insert(g.begin(), g.end());
  for (const auto& [id, _] : measured) {
    if (!allocated.contains(id)) throw Error(ErrorCode::kUnknownClient, "client '" + id + "' was not allocated");
  }
  if (measured.empty()) return;

  double sum = 0.0;
  for (const auto& [id, t] : measured) {
    auto& p = state.profiles[id];
    p.client_id = id;
    p.time = t;
    p.profiled = true;
    sum += t;
  }
  double mean = sum / static_cast<double>(measured.size());
  const double m = state.momentum;
  state.default_time = mean * m + state.default_time * (1.0 - m);
}

double brute_force_optimal(std::span<const double> times, std::size_t num_workers) {
  if (num_workers == 0) throw Error(ErrorCode::kInvalidArgument, "need at least one worker");
  constexpr double kLimit = 531441.0;  // 3^12
  double space = 1.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    space *= static_cast<double>(num_workers);
    if (space > kLimit) throw Error(ErrorCode::kInstanceTooLarge, "assignment space exceeds 3^12");
  }
  if (times.empty()) return 0.0;

  std::vector<double> loads(num_workers, 0.0);
  double best = std::numeric_limits<double>::infinity();
  // Depth-first over every assignment of job i to a worker.
  auto search = [&](auto&& self, std::size_t i, double current_max) -> void {
    if (current_max >= best) return;
    if (i == times.size()) {
      best = current_max;
      return;
    }
    for (std::size_t w = 0; w < num_workers; ++w) {
      const double before = loads[w];
      loads[w] = before + times[i];
      self(self, i + 1, std::max(current_max, loads[w]));
      loads[w] = before;
    }
  };
  search(search, 0, 0.0);
  return best;
}

}  // namespace fedsim
