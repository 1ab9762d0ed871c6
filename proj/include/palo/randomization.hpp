#pragma once

#include <vector>

#include "palo/command.hpp"
#include "palo/dynamics.hpp"
#include "palo/rng.hpp"

namespace palo::randomization {

// Sampling ranges; the defaults are the shipped randomization table.
struct Ranges {
  Range ground_friction{0.05, 2.75};
  Range restitution{0.0, 1.0};
  Range load_mass{0.0, 3.0};
  Range link_mass_scale{0.8, 1.2};
  Range com_offset{-0.05, 0.05};
  Range p_gain_scale{0.8, 1.2};
  Range d_gain_scale{0.8, 1.2};
  Range motor_power_scale{0.8, 1.2};
  Range action_delay{0.0, 0.02};
};

dynamics::DomainParams sample_domain_params(Rng& rng, const Ranges& ranges = {});
bool within(const dynamics::DomainParams& params, const Ranges& ranges = {});

struct PushConfig {
  double interval_min = 15.0;  // s
  double interval_max = 15.0;  // s
  double max_speed = 1.0;      // m/s
};

struct PushEvent {
  double time = 0.0;
  dynamics::Vec3 delta_v = dynamics::Vec3::Zero();
};

// Push times with gaps drawn uniformly from the interval window; each push is
// uniform over the horizontal disk of radius max_speed.
std::vector<PushEvent> schedule_pushes(Rng& rng, double episode_length, const PushConfig& config);

}  // namespace palo::randomization
