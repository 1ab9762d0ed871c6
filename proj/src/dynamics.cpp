#include "palo/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "palo/errors.hpp"

namespace palo::dynamics {

namespace {

double side_sign(int leg) { return (leg == kFL || leg == kRL) ? 1.0 : -1.0; }

Eigen::Matrix3d rot_x(double a) {
  return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix();
}
Eigen::Matrix3d rot_y(double a) {
  return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix();
}

// Joint origins and link centres of mass of one leg in the trunk frame.
struct LegFrames {
  std::array<Vec3, 3> joint;  // hip roll, thigh pitch, calf pitch origins
  std::array<Vec3, 3> axis;   // rotation axes
  std::array<Vec3, 3> com;    // hip link, thigh, calf centres of mass
  Vec3 foot;
};

LegFrames leg_frames(const RobotModel& m, int leg, double hip, double thigh, double calf) {
  const Eigen::Matrix3d rx = rot_x(hip);
  const Eigen::Matrix3d ry1 = rot_y(thigh);
  const Eigen::Matrix3d ry12 = rot_y(thigh + calf);
  const Vec3 lateral(0.0, side_sign(leg) * m.hip_length, 0.0);
  const Vec3& h = m.hip_offsets[leg];

  LegFrames f;
  f.joint[0] = h;
  f.joint[1] = h + rx * lateral;
  f.joint[2] = f.joint[1] + rx * (ry1 * Vec3(0.0, 0.0, -m.thigh_length));
  f.foot = f.joint[2] + rx * (ry12 * Vec3(0.0, 0.0, -m.calf_length));
  f.axis[0] = Vec3::UnitX();
  f.axis[1] = rx * Vec3::UnitY();
  f.axis[2] = f.axis[1];
  f.com[0] = h + 0.5 * (rx * lateral);
  f.com[1] = 0.5 * (f.joint[1] + f.joint[2]);
  f.com[2] = 0.5 * (f.joint[2] + f.foot);
  return f;
}

bool finite(const RobotState& s) {
  return s.base_pos.allFinite() && s.base_quat.coeffs().allFinite() && s.base_lin_vel.allFinite() &&
         s.base_ang_vel.allFinite() && s.joint_pos.allFinite() && s.joint_vel.allFinite() &&
         std::isfinite(s.time);
}

}  // namespace

RobotModel RobotModel::a1_like() {
  RobotModel m;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    m.link_masses.segment<3>(3 * leg) << 0.7, 1.0, 0.175;
    m.joint_inertia.segment<3>(3 * leg) << 0.02, 0.025, 0.015;
    m.joint_damping.segment<3>(3 * leg) << 0.01, 0.01, 0.01;
    m.joint_limits[3 * leg + 0] = {-0.802, 0.802};
    m.joint_limits[3 * leg + 1] = {-1.047, 4.189};
    m.joint_limits[3 * leg + 2] = {-2.697, -0.916};
  }
  m.hip_offsets[kFR] = Vec3(0.183, -0.047, 0.0);
  m.hip_offsets[kFL] = Vec3(0.183, 0.047, 0.0);
  m.hip_offsets[kRR] = Vec3(-0.183, -0.047, 0.0);
  m.hip_offsets[kRL] = Vec3(-0.183, 0.047, 0.0);
  const auto [thigh, calf] = m.stance_angles(m.reference_height);
  for (int leg = 0; leg < kNumLegs; ++leg) m.default_joint_pos.segment<3>(3 * leg) << 0.0, thigh, calf;
  return m;
}

std::pair<double, double> RobotModel::stance_angles(double depth) const {
  const double l1 = thigh_length;
  const double l2 = calf_length;
  const double c2 = std::clamp((depth * depth - l1 * l1 - l2 * l2) / (2.0 * l1 * l2), -1.0, 1.0);
  const double calf = -std::acos(c2);
  const double thigh = std::atan2(l2 * std::sin(calf), -(l1 + l2 * std::cos(calf)));
  return {thigh < 0.0 ? thigh + M_PI : thigh, calf};
}

void RobotModel::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("robot model: " + what); };
  if (!(trunk_mass > 0.0)) fail("trunk_mass must be positive");
  if (!(trunk_inertia.diagonal().array() > 0.0).all()) fail("trunk_inertia must be positive");
  if (!(link_masses.array() > 0.0).all()) fail("link_masses must be positive");
  if (!(joint_inertia.array() > 0.0).all()) fail("joint_inertia must be positive");
  if ((joint_damping.array() < 0.0).any()) fail("joint_damping must be non-negative");
  for (const auto& [lo, hi] : joint_limits) {
    if (!(lo < hi)) fail("joint limits require lo < hi");
  }
  if (!(torque_limit > 0.0)) fail("torque_limit must be positive");
  if (!(thigh_length > 0.0 && calf_length > 0.0 && hip_length >= 0.0)) fail("link lengths must be positive");
  if (!(reference_height > 0.0 && reference_height < thigh_length + calf_length))
    fail("reference_height must be reachable by the legs");
  if (!(contact.k_n > 0.0 && contact.c_n >= 0.0 && contact.k_t >= 0.0)) fail("contact constants invalid");
}

double RobotModel::leg_mass() const { return link_masses.sum() / kNumLegs; }

double total_mass(const RobotModel& model, const DomainParams& params) {
  return model.trunk_mass + params.link_mass_scale * model.link_masses.sum() + params.load_mass;
}

Eigen::Matrix3d effective_inertia(const RobotModel& model, const DomainParams& params) {
  // Legs folded into the trunk as point masses at the default stance.
  Eigen::Matrix3d inertia = model.trunk_inertia;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const auto q = model.default_joint_pos.segment<3>(3 * leg);
    const LegFrames f = leg_frames(model, leg, q[0], q[1], q[2]);
    for (int k = 0; k < 3; ++k) {
      const Vec3& r = f.com[k];
      const double mass = params.link_mass_scale * model.link_masses[3 * leg + k];
      inertia += mass * (r.squaredNorm() * Eigen::Matrix3d::Identity() - r * r.transpose());
    }
  }
  return inertia;
}

Vec3 leg_foot_position(const RobotModel& model, int leg, double hip, double thigh, double calf) {
  return leg_frames(model, leg, hip, thigh, calf).foot - model.hip_offsets[leg];
}

Eigen::Matrix3d leg_jacobian(const RobotModel& model, int leg, double hip, double thigh, double calf) {
  const LegFrames f = leg_frames(model, leg, hip, thigh, calf);
  Eigen::Matrix3d jac;
  for (int k = 0; k < 3; ++k) jac.col(k) = f.axis[k].cross(f.foot - f.joint[k]);
  return jac;
}

FootArray feet_in_body(const RobotModel& model, const Vec12& joint_pos) {
  FootArray out;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    out[leg] = leg_frames(model, leg, joint_pos[3 * leg], joint_pos[3 * leg + 1], joint_pos[3 * leg + 2]).foot;
  }
  return out;
}

FootArray forward_kinematics(const RobotModel& model, const Vec12& joint_pos, const Vec3& base_pos,
                             const Quat& base_quat) {
  const Eigen::Matrix3d rot = base_quat.toRotationMatrix();
  FootArray out = feet_in_body(model, joint_pos);
  for (auto& p : out) p = base_pos + rot * p;
  return out;
}

FootArray foot_velocities(const RobotModel& model, const RobotState& state) {
  const Eigen::Matrix3d rot = state.base_quat.toRotationMatrix();
  FootArray out;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const auto q = state.joint_pos.segment<3>(3 * leg);
    const LegFrames f = leg_frames(model, leg, q[0], q[1], q[2]);
    Vec3 rel = Vec3::Zero();
    for (int k = 0; k < 3; ++k) rel += f.axis[k].cross(f.foot - f.joint[k]) * state.joint_vel[3 * leg + k];
    out[leg] = state.base_lin_vel + rot * (state.base_ang_vel.cross(f.foot) + rel);
  }
  return out;
}

Eigen::Vector2d friction_force(const Eigen::Vector2d& slip_velocity, double normal, double mu, double k_t) {
  const double speed = slip_velocity.norm();
  if (speed <= 0.0 || normal <= 0.0) return Eigen::Vector2d::Zero();
  const double magnitude = std::min(k_t * speed, mu * normal);
  return -magnitude * slip_velocity / speed;
}

ContactResult contact_forces(const RobotState& state, const terrain::TerrainMap& terrain, const RobotModel& model,
                             const DomainParams& params) {
  ContactResult out;
  const FootArray feet = forward_kinematics(model, state.joint_pos, state.base_pos, state.base_quat);
  FootArray vel;
  bool have_vel = false;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const Vec3& p = feet[leg];
    if (!terrain.contains(p.x(), p.y())) {
      throw FootOutsideTerrain("foot " + std::to_string(leg) + " left the heightfield");
    }
    const double depth = terrain.sample_height(p.x(), p.y()) - p.z();
    if (!(depth > 0.0)) continue;
    if (!have_vel) {
      vel = foot_velocities(model, state);
      have_vel = true;
    }
    const Vec3& v = vel[leg];
    // Damping opposes the vertical foot velocity; separating motion is damped
    // less as restitution grows.
    const double damping = v.z() > 0.0 ? model.contact.c_n * (1.0 - params.restitution) : model.contact.c_n;
    const double normal = std::max(0.0, model.contact.k_n * depth - damping * v.z());
    const Eigen::Vector2d tangential =
        friction_force(v.head<2>(), normal, params.ground_friction, model.contact.k_t);
    out.force[leg] = Vec3(tangential.x(), tangential.y(), normal);
    out.contact[leg] = true;
  }
  return out;
}

Vec12 clamp_torques(const Vec12& torques, const RobotModel& model, const DomainParams& params) {
  const double limit = model.torque_limit * params.motor_power_scale;
  return torques.cwiseMax(-limit).cwiseMin(limit);
}

Vec12 joint_gravity_torque(const RobotModel& model, const DomainParams& params, const RobotState& state,
                           const std::array<bool, kNumLegs>& stance) {
  Vec12 tau = Vec12::Zero();
  const Vec3 g_body = state.base_quat.conjugate() * Vec3(0.0, 0.0, -kGravity);
  for (int leg = 0; leg < kNumLegs; ++leg) {
    if (stance[leg]) continue;
    const auto q = state.joint_pos.segment<3>(3 * leg);
    const LegFrames f = leg_frames(model, leg, q[0], q[1], q[2]);
    for (int j = 0; j < 3; ++j) {
      Vec3 moment = Vec3::Zero();
      for (int k = j; k < 3; ++k) {
        const double mass = params.link_mass_scale * model.link_masses[3 * leg + k];
        moment += (f.com[k] - f.joint[j]).cross(mass * g_body);
      }
      tau[3 * leg + j] = f.axis[j].dot(moment);
    }
  }
  return tau;
}

RobotState step(const RobotState& state, const Vec12& torques, const terrain::TerrainMap& terrain,
                const RobotModel& model, const DomainParams& params, double dt) {
  const ContactResult contact = contact_forces(state, terrain, model, params);
  const Vec12 tau = clamp_torques(torques, model, params);
  const Vec12 gravity_tau = joint_gravity_torque(model, params, state, contact.contact);

  RobotState next = state;

  // Decoupled joints: each a 1-DOF second-order system.
  const Vec12 joint_acc =
      (tau - model.joint_damping.cwiseProduct(state.joint_vel) + gravity_tau).cwiseQuotient(model.joint_inertia);
  next.joint_vel = state.joint_vel + dt * joint_acc;
  next.joint_pos = state.joint_pos + dt * next.joint_vel;
  for (int j = 0; j < kNumJoints; ++j) {
    const auto [lo, hi] = model.joint_limits[j];
    if (next.joint_pos[j] < lo) {
      next.joint_pos[j] = lo;
      next.joint_vel[j] = 0.0;
    } else if (next.joint_pos[j] > hi) {
      next.joint_pos[j] = hi;
      next.joint_vel[j] = 0.0;
    }
  }

  // Trunk Newton-Euler with contact wrench about the (offset) centre of mass.
  const Eigen::Matrix3d rot = state.base_quat.toRotationMatrix();
  const double mass = total_mass(model, params);
  const Vec3 com = state.base_pos + rot * params.com_offset;
  const FootArray feet = forward_kinematics(model, state.joint_pos, state.base_pos, state.base_quat);
  Vec3 force = Vec3::Zero();
  Vec3 moment = Vec3::Zero();
  for (int leg = 0; leg < kNumLegs; ++leg) {
    if (!contact.contact[leg]) continue;
    force += contact.force[leg];
    moment += (feet[leg] - com).cross(contact.force[leg]);
  }
  const Vec3 gravity(0.0, 0.0, -kGravity);
  next.base_lin_vel = state.base_lin_vel + dt * (force / mass + gravity);
  // Gravity enters the position update with its exact constant-acceleration term.
  next.base_pos = state.base_pos + dt * next.base_lin_vel - 0.5 * dt * dt * gravity;

  const Eigen::Matrix3d inertia = effective_inertia(model, params);
  const Vec3& w = state.base_ang_vel;
  const Vec3 moment_body = rot.transpose() * moment;
  const Vec3 ang_acc = inertia.ldlt().solve(moment_body - w.cross(inertia * w));
  next.base_ang_vel = w + dt * ang_acc;
  const double angle = next.base_ang_vel.norm() * dt;
  if (angle > 0.0) {
    next.base_quat = state.base_quat * Quat(Eigen::AngleAxisd(angle, next.base_ang_vel.normalized()));
  }
  next.base_quat.normalize();
  next.time = state.time + dt;

  if (!finite(next)) throw NonFiniteState("simulation produced a non-finite state");

  const ContactResult after = contact_forces(next, terrain, model, params);
  next.foot_contact = after.contact;
  next.foot_force = after.force;
  return next;
}

RobotState apply_push(RobotState state, const Vec3& delta_v) {
  state.base_lin_vel += delta_v;
  return state;
}

double mechanical_energy(const RobotState& state, const RobotModel& model, const DomainParams& params) {
  const double mass = total_mass(model, params);
  const Eigen::Matrix3d inertia = effective_inertia(model, params);
  const Eigen::Matrix3d rot = state.base_quat.toRotationMatrix();
  double energy = 0.5 * mass * state.base_lin_vel.squaredNorm() + mass * kGravity * state.base_pos.z() +
                  0.5 * state.base_ang_vel.dot(inertia * state.base_ang_vel) +
                  0.5 * state.joint_vel.dot(model.joint_inertia.cwiseProduct(state.joint_vel));
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const auto q = state.joint_pos.segment<3>(3 * leg);
    const LegFrames f = leg_frames(model, leg, q[0], q[1], q[2]);
    for (int k = 0; k < 3; ++k) {
      energy += params.link_mass_scale * model.link_masses[3 * leg + k] * kGravity * (rot * f.com[k]).z();
    }
  }
  return energy;
}

BodyPoints body_points(const RobotModel& model, const RobotState& state) {
  const Eigen::Matrix3d rot = state.base_quat.toRotationMatrix();
  BodyPoints out;
  const Vec3& e = model.trunk_half_extents;
  int n = 0;
  for (double sx : {-1.0, 1.0}) {
    for (double sy : {-1.0, 1.0}) {
      for (double sz : {-1.0, 1.0}) {
        out.trunk_corners[n++] = state.base_pos + rot * Vec3(sx * e.x(), sy * e.y(), sz * e.z());
      }
    }
  }
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const auto q = state.joint_pos.segment<3>(3 * leg);
    const LegFrames f = leg_frames(model, leg, q[0], q[1], q[2]);
    out.hips[leg] = state.base_pos + rot * f.joint[1];
    out.knees[leg] = state.base_pos + rot * f.joint[2];
  }
  return out;
}

RobotState rest_state(const RobotModel& model, const DomainParams& params, double ground) {
  RobotState s;
  const double sag = total_mass(model, params) * kGravity / (kNumLegs * model.contact.k_n);
  s.base_pos = Vec3(0.0, 0.0, ground + model.reference_height - sag);
  s.joint_pos = model.default_joint_pos;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    s.foot_contact[leg] = true;
    s.foot_force[leg] = Vec3(0.0, 0.0, model.contact.k_n * sag);
  }
  return s;
}

}  // namespace palo::dynamics
