#include "fedsim/bench.hpp"

#include "fedsim/config.hpp"
#include "fedsim/dataset.hpp"
#include "fedsim/flow.hpp"

namespace fedsim {

std::vector<SchedBenchRow> sched_bench(const SchedBenchSpec& spec) {
  if (spec.clients_per_round == 0 || spec.clients_per_round > spec.num_clients) {
    throw Error(ErrorCode::kInvalidConfig, "clients_per_round must be in [1, num_clients]");
  }
  static constexpr SchedulerKind kStrategies[] = {SchedulerKind::kGreedyAda, SchedulerKind::kRandom,
                                                  SchedulerKind::kSlowest};
  std::vector<SchedBenchRow> rows;
  for (std::size_t s = 0; s < spec.seeds; ++s) {
    const std::uint64_t seed = spec.first_seed + s;
    SyntheticSpec syn;
    syn.num_classes = spec.num_classes;
    syn.feature_dim = 2;
    syn.total_samples = spec.total_samples;
    auto pool = generate_synthetic(syn, derive_seed(seed, {hash_string("synthetic")}));
    PartitionSpec ps;
    ps.scheme = PartitionScheme::kDirichlet;
    ps.num_clients = spec.num_clients;
    ps.alpha = spec.alpha;
    ps.unbalanced_beta = spec.beta;
    ps.seed = derive_seed(seed, {hash_string("partition")});
    auto fd = partition(pool, ps);
    auto ids = fd.client_ids();
    auto hetero = spec.hetero;
    hetero.assignment_seed = derive_seed(seed, {hash_string("profiles")});
    auto profiles = assign_profiles(ids, hetero);

    // Selections shared by all strategies.
    auto sel_rng = make_rng(seed, {hash_string("selection")});
    std::vector<std::vector<ClientId>> selections;
    for (std::uint32_t r = 0; r < spec.rounds; ++r) selections.push_back(select_clients(ids, spec.clients_per_round, sel_rng));

    auto actual_time = [&](const ClientId& id, std::uint32_t round) {
      auto base = base_compute_time(fd.clients.at(id).train.size(), spec.epochs, hetero);
      return simulated_round_time(base, profiles.at(id), hetero, round);
    };

    double sequential = 0.0;
    for (std::uint32_t r = 0; r < spec.rounds; ++r) {
      for (const auto& id : selections[r]) sequential += actual_time(id, r);
    }

    for (auto m : spec.workers) {
      for (auto kind : kStrategies) {
        SchedulerState state;
        state.default_time = spec.default_time;
        state.momentum = spec.momentum;
        auto sched_rng = make_rng(seed, {hash_string("scheduler"), m});
        double total = 0.0;
        for (std::uint32_t r = 0; r < spec.rounds; ++r) {
          std::vector<ClientProfile> selected;
          std::map<ClientId, double> measured;
          for (const auto& id : selections[r]) {
            auto it = state.profiles.find(id);
            selected.push_back(it != state.profiles.end() ? it->second : ClientProfile{id, profiles.at(id).speed_ratio});
            measured[id] = actual_time(id, r);
          }
          auto alloc = allocate(selected, m, kind, state, sched_rng);
          total += realized_makespan(alloc, measured);
          adaptive_profile(alloc, measured, state);
        }
        rows.push_back({std::string(to_string(kind)), m, seed, total, total > 0 ? sequential / total : 0.0});
      }
    }
  }
  return rows;
}

}  // namespace fedsim
