#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "fedsim/types.hpp"

namespace fedsim {

struct DelayRange {
  double lo = 0.0;
  double hi = 0.0;
};

// System-heterogeneity settings. The default ratios are placeholders for
// device benchmark data, not measurements.
struct HeteroSpec {
  bool enabled = false;
  std::vector<double> speed_ratios = {1.0, 1.5, 2.0, 3.0};
  std::uint64_t assignment_seed = 0;
  std::optional<DelayRange> network_delay;
  double throughput = 10000.0;  // samples per second at ratio 1.0
  bool real_sleep = false;      // remote clients actually wait out their simulated time

  void validate() const;
};

struct ClientProfile {
  ClientId client_id;
  double speed_ratio = 1.0;
  double time = 0.0;      // seconds; meaningful once profiled
  bool profiled = false;  // set only after a measured round
};

using ProfileMap = std::map<ClientId, ClientProfile>;

// Seeded uniform choice of a ratio per client; all 1.0 when disabled.
ProfileMap assign_profiles(std::span<const ClientId> client_ids, const HeteroSpec& spec);

// (num_samples * epochs) / throughput.
double base_compute_time(std::size_t num_samples, std::uint32_t epochs, const HeteroSpec& spec);

// Network delay for (client, round), sampled from an independent
// per-(seed, client, round) stream so it does not depend on call order.
double sample_network_delay(const HeteroSpec& spec, const ClientId& client, std::uint32_t round);

// base * ratio + delay. The simulated clock advances by this amount; nothing sleeps.
double simulated_round_time(double base_compute_time, const ClientProfile& profile, const HeteroSpec& spec,
                            std::uint32_t round = 0);

}  // namespace fedsim
