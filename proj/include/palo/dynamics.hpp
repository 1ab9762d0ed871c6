#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <utility>

#include "palo/terrain.hpp"

namespace palo::dynamics {

inline constexpr int kNumLegs = 4;
inline constexpr int kNumJoints = 12;
inline constexpr double kGravity = 9.81;

using Vec3 = Eigen::Vector3d;
using Vec12 = Eigen::Matrix<double, kNumJoints, 1>;
using Quat = Eigen::Quaterniond;
using FootArray = std::array<Vec3, kNumLegs>;

// Leg order: FR, FL, RR, RL. Joints per leg: hip roll, thigh pitch, calf pitch.
enum Leg : int { kFR = 0, kFL = 1, kRR = 2, kRL = 3 };

struct RobotState {
  Vec3 base_pos = Vec3::Zero();
  Quat base_quat = Quat::Identity();
  Vec3 base_lin_vel = Vec3::Zero();  // world frame
  Vec3 base_ang_vel = Vec3::Zero();  // body frame
  Vec12 joint_pos = Vec12::Zero();
  Vec12 joint_vel = Vec12::Zero();
  std::array<bool, kNumLegs> foot_contact{};
  FootArray foot_force{Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
  double time = 0.0;
};

struct ContactModel {
  double k_n = 10'000.0;  // N/m
  double c_n = 200.0;     // N s/m
  double k_t = 300.0;     // N s/m, tangential demand per unit slip speed
};

struct RobotModel {
  double trunk_mass = 4.5;
  Eigen::Matrix3d trunk_inertia = Eigen::Vector3d(0.0158, 0.0377, 0.0456).asDiagonal();
  Vec12 link_masses;
  Vec12 joint_inertia;
  Vec12 joint_damping;
  std::array<std::pair<double, double>, kNumJoints> joint_limits{};
  double torque_limit = 33.5;
  FootArray hip_offsets;
  double hip_length = 0.0838;
  double thigh_length = 0.2;
  double calf_length = 0.2;
  Vec12 default_joint_pos;
  double reference_height = 0.30;
  Eigen::Vector3d trunk_half_extents = Eigen::Vector3d(0.183, 0.097, 0.057);
  ContactModel contact;

  // A1-sized quadruped, 12 kg total, default stance placing the feet exactly
  // reference_height below the hips.
  static RobotModel a1_like();

  // Throws ConfigError on non-positive masses/inertias or inverted limits.
  void validate() const;

  double leg_mass() const;
  // Thigh/calf angles that put a foot straight below the hip at the given depth.
  std::pair<double, double> stance_angles(double depth) const;
};

struct DomainParams {
  double ground_friction = 1.0;
  double restitution = 0.0;
  double load_mass = 0.0;
  double link_mass_scale = 1.0;
  Vec3 com_offset = Vec3::Zero();
  double p_gain_scale = 1.0;
  double d_gain_scale = 1.0;
  double motor_power_scale = 1.0;
  double action_delay = 0.0;
};

double total_mass(const RobotModel& model, const DomainParams& params);
Eigen::Matrix3d effective_inertia(const RobotModel& model, const DomainParams& params);

// Foot position of one leg relative to its hip joint, in the trunk frame.
Vec3 leg_foot_position(const RobotModel& model, int leg, double hip, double thigh, double calf);
// d(foot)/d(hip, thigh, calf) in the trunk frame.
Eigen::Matrix3d leg_jacobian(const RobotModel& model, int leg, double hip, double thigh, double calf);

FootArray feet_in_body(const RobotModel& model, const Vec12& joint_pos);
FootArray forward_kinematics(const RobotModel& model, const Vec12& joint_pos, const Vec3& base_pos,
                             const Quat& base_quat);
// World-frame foot velocities.
FootArray foot_velocities(const RobotModel& model, const RobotState& state);

struct ContactResult {
  FootArray force{Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
  std::array<bool, kNumLegs> contact{};
};

// Penalty contact on the heightfield. Throws FootOutsideTerrain when a foot
// leaves the map.
ContactResult contact_forces(const RobotState& state, const terrain::TerrainMap& terrain, const RobotModel& model,
                             const DomainParams& params);

// Tangential friction force for a slip velocity under the Coulomb cap mu * normal.
Eigen::Vector2d friction_force(const Eigen::Vector2d& slip_velocity, double normal, double mu, double k_t);

Vec12 clamp_torques(const Vec12& torques, const RobotModel& model, const DomainParams& params);

// Torque gravity exerts on each joint of a swing leg (stance legs are
// supported by the ground and get zero).
Vec12 joint_gravity_torque(const RobotModel& model, const DomainParams& params, const RobotState& state,
                           const std::array<bool, kNumLegs>& stance);

// One semi-implicit Euler step. Throws NonFiniteState on NaN/inf.
RobotState step(const RobotState& state, const Vec12& torques, const terrain::TerrainMap& terrain,
                const RobotModel& model, const DomainParams& params, double dt);

RobotState apply_push(RobotState state, const Vec3& delta_v);

// Trunk translational + rotational + potential energy plus joint kinetic energy
// and leg potential relative to the trunk.
double mechanical_energy(const RobotState& state, const RobotModel& model, const DomainParams& params);

struct BodyPoints {
  std::array<Vec3, 8> trunk_corners;  // world frame
  FootArray hips;
  FootArray knees;
};
BodyPoints body_points(const RobotModel& model, const RobotState& state);

// Trunk at rest with the default stance, settled onto flat ground at `ground`.
RobotState rest_state(const RobotModel& model, const DomainParams& params, double ground = 0.0);

}  // namespace palo::dynamics
