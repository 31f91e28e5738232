#include "fedsim/hetero.hpp"

#include <cmath>

#include "fedsim/error.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

void HeteroSpec::validate() const {
  if (speed_ratios.empty()) throw Error(ErrorCode::kInvalidConfig, "speed_ratios must be non-empty");
  for (double r : speed_ratios) {
    if (!(r > 0.0) || !std::isfinite(r)) throw Error(ErrorCode::kInvalidConfig, "speed ratios must be positive");
  }
  if (!(throughput > 0.0)) throw Error(ErrorCode::kInvalidConfig, "throughput must be positive");
  if (network_delay && !(network_delay->lo >= 0.0 && network_delay->hi >= network_delay->lo)) {
    throw Error(ErrorCode::kInvalidConfig, "network_delay must satisfy 0 <= lo <= hi");
  }
}

ProfileMap assign_profiles(std::span<const ClientId> client_ids, const HeteroSpec& spec) {
  spec.validate();
  ProfileMap out;
  auto rng = make_rng(spec.assignment_seed, {hash_string("profiles")});
  std::uniform_int_distribution<std::size_t> pick(0, spec.speed_ratios.size() - 1);
  for (const auto& id : client_ids) {
    ClientProfile p;
    p.client_id = id;
    p.speed_ratio = spec.enabled ? spec.speed_ratios[pick(rng)] : 1.0;
    out[id] = p;
  }
  return out;
}

double base_compute_time(std::size_t num_samples, std::uint32_t epochs, const HeteroSpec& spec) {
  return static_cast<double>(num_samples) * static_cast<double>(epochs) / spec.throughput;
}

double sample_network_delay(const HeteroSpec& spec, const ClientId& client, std::uint32_t round) {
  if (!spec.enabled || !spec.network_delay) return 0.0;
  const auto& d = *spec.network_delay;
  if (d.hi == d.lo) return d.lo;
  auto rng = make_rng(spec.assignment_seed, {hash_string("delay"), hash_string(client), round});
  return std::uniform_real_distribution<double>(d.lo, d.hi)(rng);
}

double simulated_round_time(double base, const ClientProfile& profile, const HeteroSpec& spec, std::uint32_t round) {
  if (base < 0.0) throw Error(ErrorCode::kInvalidArgument, "base compute time must be >= 0");
  return base * profile.speed_ratio + sample_network_delay(spec, profile.client_id, round);
}

}  // namespace fedsim
