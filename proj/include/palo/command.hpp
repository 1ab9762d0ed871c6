#pragma once

#include <Eigen/Core>

#include <array>
#include <numbers>

namespace palo {

inline constexpr int kCommandDim = 6;

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
  bool contains(double x) const { return x >= lo && x <= hi; }
  friend bool operator==(const Range&, const Range&) = default;
};

// Commanded (or measured) velocity and posture. dh is the offset from the
// robot's reference height.
struct Command6D {
  double vx = 0.0;     // m/s
  double vy = 0.0;     // m/s
  double wz = 0.0;     // rad/s
  double dh = 0.0;     // m
  double pitch = 0.0;  // rad
  double roll = 0.0;   // rad

  Eigen::Matrix<double, kCommandDim, 1> as_vector() const {
    Eigen::Matrix<double, kCommandDim, 1> v;
    v << vx, vy, wz, dh, pitch, roll;
    return v;
  }
  static Command6D from_vector(const Eigen::Matrix<double, kCommandDim, 1>& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5]};
  }
  friend bool operator==(const Command6D&, const Command6D&) = default;
};

// Absolute command limits shared by the sampler, the env and the teleop server.
namespace limits {
inline constexpr double kPitch = std::numbers::pi / 4.0;
inline constexpr double kRoll = std::numbers::pi / 6.0;
inline constexpr double kMinHeight = 0.1;
inline constexpr double kMaxHeight = 0.4;
inline constexpr double kLinVel = 1.5;
inline constexpr double kAngVel = 2.0;
}  // namespace limits

struct ClampReport {
  Command6D command;
  std::array<bool, kCommandDim> clamped{};
  bool any() const {
    for (bool c : clamped) {
      if (c) return true;
    }
    return false;
  }
};

// Clamp every channel into the absolute Command6D limits.
ClampReport clamp_command(const Command6D& cmd, double reference_height);

}  // namespace palo
