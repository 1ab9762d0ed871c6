#include "palo/command.hpp"

#include <algorithm>
#include <cmath>

namespace palo {

ClampReport clamp_command(const Command6D& cmd, double reference_height) {
  ClampReport out;
  const std::array<double, kCommandDim> lo = {-limits::kLinVel, -limits::kLinVel, -limits::kAngVel,
                                              limits::kMinHeight - reference_height, -limits::kPitch,
                                              -limits::kRoll};
  const std::array<double, kCommandDim> hi = {limits::kLinVel, limits::kLinVel, limits::kAngVel,
                                              limits::kMaxHeight - reference_height, limits::kPitch,
                                              limits::kRoll};
  auto v = cmd.as_vector();
  for (int i = 0; i < kCommandDim; ++i) {
    const double x = std::isfinite(v[i]) ? v[i] : 0.0;
    const double c = std::clamp(x, lo[i], hi[i]);
    out.clamped[i] = c != v[i];
    v[i] = c;
  }
  out.command = Command6D::from_vector(v);
  return out;
}

}  // namespace palo
