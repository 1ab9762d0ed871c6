#include "palo/randomization.hpp"

#include <cmath>
#include <numbers>

namespace palo::randomization {

dynamics::DomainParams sample_domain_params(Rng& rng, const Ranges& r) {
  dynamics::DomainParams p;
  p.ground_friction = rng.uniform(r.ground_friction.lo, r.ground_friction.hi);
  p.restitution = rng.uniform(r.restitution.lo, r.restitution.hi);
  p.load_mass = rng.uniform(r.load_mass.lo, r.load_mass.hi);
  p.link_mass_scale = rng.uniform(r.link_mass_scale.lo, r.link_mass_scale.hi);
  for (int i = 0; i < 3; ++i) p.com_offset[i] = rng.uniform(r.com_offset.lo, r.com_offset.hi);
  p.p_gain_scale = rng.uniform(r.p_gain_scale.lo, r.p_gain_scale.hi);
  p.d_gain_scale = rng.uniform(r.d_gain_scale.lo, r.d_gain_scale.hi);
  p.motor_power_scale = rng.uniform(r.motor_power_scale.lo, r.motor_power_scale.hi);
  p.action_delay = rng.uniform(r.action_delay.lo, r.action_delay.hi);
  return p;
}

bool within(const dynamics::DomainParams& p, const Ranges& r) {
  bool ok = r.ground_friction.contains(p.ground_friction) && r.restitution.contains(p.restitution) &&
            r.load_mass.contains(p.load_mass) && r.link_mass_scale.contains(p.link_mass_scale) &&
            r.p_gain_scale.contains(p.p_gain_scale) && r.d_gain_scale.contains(p.d_gain_scale) &&
            r.motor_power_scale.contains(p.motor_power_scale) && r.action_delay.contains(p.action_delay);
  for (int i = 0; i < 3; ++i) ok = ok && r.com_offset.contains(p.com_offset[i]);
  return ok;
}

std::vector<PushEvent> schedule_pushes(Rng& rng, double episode_length, const PushConfig& config) {
  std::vector<PushEvent> events;
  if (!(episode_length > 0.0) || !(config.interval_max > 0.0)) return events;
  double t = 0.0;
  for (;;) {
    t += rng.uniform(config.interval_min, config.interval_max);
    if (t >= episode_length) break;
    const double radius = config.max_speed * std::sqrt(rng.uniform());
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    events.push_back({t, dynamics::Vec3(radius * std::cos(angle), radius * std::sin(angle), 0.0)});
  }
  return events;
}

}  // namespace palo::randomization
