#include "palo/env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "palo/errors.hpp"

namespace palo::env {

namespace {

double terrain_height_clamped(const terrain::TerrainMap& map, double x, double y) {
  const double cx = std::clamp(x, map.origin().x(), map.origin().x() + map.width());
  const double cy = std::clamp(y, map.origin().y(), map.origin().y() + map.length());
  return map.sample_height(cx, cy);
}

bool below_ground(const terrain::TerrainMap& map, const Vec3& p) {
  return p.z() < terrain_height_clamped(map, p.x(), p.y());
}

double yaw_of(const dynamics::Quat& q) { return quat_to_euler(q).yaw; }

}  // namespace

Euler quat_to_euler(const dynamics::Quat& q) {
  const double w = q.w();
  const double x = q.x();
  const double y = q.y();
  const double z = q.z();
  Euler e;
  e.roll = std::atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y));
  e.pitch = std::asin(std::clamp(2.0 * (w * y - z * x), -1.0, 1.0));
  e.yaw = std::atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z));
  return e;
}

Vec12 pd_torque(const Vec12& target, const Vec12& q, const Vec12& qdot, const PdGains& gains,
                const dynamics::DomainParams& params, const dynamics::RobotModel& model) {
  const Vec12 tau = gains.kp * params.p_gain_scale * (target - q) - gains.kd * params.d_gain_scale * qdot;
  return dynamics::clamp_torques(tau, model, params);
}

ProprioVec build_observation(const dynamics::RobotState& state, const Command6D& cmd, const Vec12& prev_joint_pos,
                             const dynamics::RobotModel& model, const NoiseBands& noise, Rng* rng,
                             const ObservationScales& scales) {
  auto jitter = [rng](double band) { return rng ? rng->uniform(-band, band) : 0.0; };
  const Euler e = quat_to_euler(state.base_quat);
  const Vec3 gravity = state.base_quat.conjugate() * Vec3(0.0, 0.0, -1.0);

  ProprioVec o;
  o[channel::kYawRate] = (state.base_ang_vel.z() + jitter(noise.yaw_rate)) * scales.yaw_rate;
  o[channel::kPitch] = e.pitch + jitter(noise.angle);
  o[channel::kRoll] = e.roll + jitter(noise.angle);
  for (int i = 0; i < 3; ++i) o[channel::kGravity + i] = gravity[i] + jitter(noise.gravity);
  o[channel::kCommand + 0] = cmd.vx * scales.lin_vel_cmd;
  o[channel::kCommand + 1] = cmd.vy * scales.lin_vel_cmd;
  o[channel::kCommand + 2] = cmd.wz * scales.yaw_rate_cmd;
  o[channel::kCommand + 3] = cmd.dh * scales.height_cmd;
  o[channel::kCommand + 4] = cmd.pitch;
  o[channel::kCommand + 5] = cmd.roll;
  for (int j = 0; j < dynamics::kNumJoints; ++j) {
    o[channel::kJointPos + j] = state.joint_pos[j] - model.default_joint_pos[j] + jitter(noise.joint_pos);
    o[channel::kJointVel + j] = (state.joint_vel[j] + jitter(noise.joint_vel)) * scales.joint_vel;
    o[channel::kPrevJointPos + j] = prev_joint_pos[j] - model.default_joint_pos[j] + jitter(noise.joint_pos);
  }
  return o;
}

PrivilegedVec build_privileged(const dynamics::RobotState& state, const terrain::TerrainMap& terrain,
                               const dynamics::RobotModel& model, const dynamics::DomainParams& params) {
  PrivilegedVec p;
  const Vec3 v_body = state.base_quat.conjugate() * state.base_lin_vel;
  p.segment<3>(0) = 2.0 * v_body;
  const auto scan = terrain::height_scan(terrain, state.base_pos.head<2>(), yaw_of(state.base_quat));
  for (int i = 0; i < terrain::kHeightScanPoints; ++i) {
    p[3 + i] = std::clamp(5.0 * (state.base_pos.z() - scan[i] - model.reference_height), -1.0, 1.0);
  }
  const double nominal_mass = dynamics::total_mass(model, dynamics::DomainParams{});
  p[20] = params.ground_friction - 1.0;
  p[21] = params.restitution - 0.5;
  p[22] = (dynamics::total_mass(model, params) - nominal_mass) / 3.0;
  p.segment<3>(23) = 20.0 * params.com_offset;
  for (int leg = 0; leg < dynamics::kNumLegs; ++leg) {
    p.segment<3>(26 + 3 * leg) = 0.01 * (state.base_quat.conjugate() * state.foot_force[leg]);
    p[38 + leg] = state.foot_contact[leg] ? 1.0 : 0.0;
  }
  return p;
}

AmpStateVec amp_state_features(const dynamics::RobotState& state, const terrain::TerrainMap& terrain,
                               const dynamics::RobotModel& model) {
  AmpStateVec f;
  f.segment<12>(0) = state.joint_pos;
  f.segment<12>(12) = state.joint_vel;
  f[24] = state.base_pos.z() - terrain_height_clamped(terrain, state.base_pos.x(), state.base_pos.y());
  f.segment<3>(25) = state.base_quat.conjugate() * state.base_lin_vel;
  f.segment<3>(28) = state.base_ang_vel;
  const auto feet = dynamics::feet_in_body(model, state.joint_pos);
  for (int leg = 0; leg < dynamics::kNumLegs; ++leg) f.segment<3>(31 + 3 * leg) = feet[leg];
  return f;
}

Actual6D measure(const dynamics::RobotState& state, const terrain::TerrainMap& terrain) {
  const Euler e = quat_to_euler(state.base_quat);
  const double c = std::cos(e.yaw);
  const double s = std::sin(e.yaw);
  const Vec3& v = state.base_lin_vel;
  Actual6D a;
  a.vx = c * v.x() + s * v.y();
  a.vy = -s * v.x() + c * v.y();
  a.wz = (state.base_quat * state.base_ang_vel).z();
  a.height = state.base_pos.z() - terrain_height_clamped(terrain, state.base_pos.x(), state.base_pos.y());
  a.pitch = e.pitch;
  a.roll = e.roll;
  return a;
}

RewardWeights RewardWeights::scaled(double dt) const {
  RewardWeights w = *this;
  for (double* x : {&w.w_v, &w.w_w, &w.w_h, &w.w_theta, &w.w_style, &w.action_rate, &w.torque, &w.vertical_vel,
                    &w.collision, &w.feet_air_time}) {
    *x *= dt;
  }
  return w;
}

TaskReward task_reward(const Actual6D& a, const Command6D& cmd, const RewardWeights& w, double reference_height) {
  TaskReward r;
  const double ev = (a.vx - cmd.vx) * (a.vx - cmd.vx) + (a.vy - cmd.vy) * (a.vy - cmd.vy);
  const double ew = (a.wz - cmd.wz) * (a.wz - cmd.wz);
  const double eh = std::abs(a.height - (reference_height + cmd.dh));
  const double et = (a.pitch - cmd.pitch) * (a.pitch - cmd.pitch) + (a.roll - cmd.roll) * (a.roll - cmd.roll);
  r.r_v = std::exp(-ev / w.sigma_v);
  r.r_w = std::exp(-ew / w.sigma_w);
  r.r_h = std::exp(-eh / w.sigma_h);
  r.r_theta = std::exp(-et / w.sigma_theta);
  return r;
}

double total_reward(const TaskReward& task, double style, const RegTerms& reg, const RewardWeights& w,
                    double posture_multiplier) {
  const double velocity = w.w_v * task.r_v + w.w_w * task.r_w;
  const double posture = posture_multiplier * (w.w_h * task.r_h + w.w_theta * task.r_theta);
  const double penalties = w.action_rate * reg.action_rate + w.torque * reg.torque +
                           w.vertical_vel * reg.vertical_vel + w.collision * reg.collision;
  return velocity + posture + w.w_style * style - penalties + w.feet_air_time * reg.feet_air_time;
}

Env::Env(dynamics::RobotModel model, EnvConfig config, Rng rng)
    : model_(std::move(model)), config_(std::move(config)) {
  model_.validate();
  scaled_weights_ = config_.reward.scaled(config_.control_dt);
  config_.command.reference_height = model_.reference_height;
  state_.rng = rng;
}

void Env::resample_command() {
  state_.command = curricula::sample_command(state_.terrain.kind, grid_, state_.rng, config_.command);
  state_.since_resample = 0.0;
}

void Env::reset(std::shared_ptr<const terrain::TerrainMap> terrain, curricula::TerrainAssignment assignment,
                int variant) {
  terrain_ = std::move(terrain);
  state_.terrain = assignment;
  state_.terrain_variant = variant;
  state_.params = config_.randomize ? randomization::sample_domain_params(state_.rng, config_.ranges)
                                    : dynamics::DomainParams{};

  dynamics::RobotState robot = dynamics::rest_state(model_, state_.params, 0.0);
  const double yaw = state_.rng.uniform(-std::numbers::pi, std::numbers::pi);
  robot.base_quat = dynamics::Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ()));
  const Eigen::Vector2d spawn = terrain_->center();
  robot.base_pos.head<2>() = spawn;
  const auto feet = dynamics::forward_kinematics(model_, robot.joint_pos, robot.base_pos, robot.base_quat);
  double ground = terrain_height_clamped(*terrain_, spawn.x(), spawn.y());
  for (const auto& f : feet) ground = std::max(ground, terrain_height_clamped(*terrain_, f.x(), f.y()));
  robot.base_pos.z() += ground + config_.spawn_drop;
  const auto contact = dynamics::contact_forces(robot, *terrain_, model_, state_.params);
  robot.foot_contact = contact.contact;
  robot.foot_force = contact.force;
  state_.robot = robot;

  state_.spawn_xy = spawn;
  state_.prev_joint_pos = robot.joint_pos;
  state_.prev_action.setZero();
  state_.prev_target = model_.default_joint_pos;
  state_.episode_step = 0;
  state_.air_time.fill(0.0);
  resample_command();
  state_.pushes.clear();
  state_.next_push = 0;
  if (config_.pushes) {
    state_.pushes = randomization::schedule_pushes(state_.rng, config_.max_episode_steps * config_.control_dt,
                                                   config_.push);
  }
}

ObservationPair Env::observation() {
  ObservationPair obs;
  obs.proprio = build_observation(state_.robot, state_.command, state_.prev_joint_pos, model_, config_.noise,
                                  config_.observation_noise ? &state_.rng : nullptr, config_.scales);
  obs.privileged = build_privileged(state_.robot, *terrain_, model_, state_.params);
  return obs;
}

AmpStateVec Env::amp_features() const { return amp_state_features(state_.robot, *terrain_, model_); }

Actual6D Env::actual() const { return measure(state_.robot, *terrain_); }

StepResult Env::step(const ActionVec& action_in) {
  StepResult out;
  StepInfo& info = out.info;
  info.command = state_.command;

  const ActionVec action = action_in.cwiseMax(-config_.action_clip).cwiseMin(config_.action_clip);
  const Vec12 target = model_.default_joint_pos + config_.action_scale * action;
  const double dt = config_.control_dt / config_.substeps;
  const Vec12 prev_q = state_.robot.joint_pos;

  double torque_sq = 0.0;
  try {
    for (int k = 0; k < config_.substeps; ++k) {
      // Delayed targets: the new target phases in once the delay has elapsed.
      const double f = std::clamp((k * dt + dt - state_.params.action_delay) / dt, 0.0, 1.0);
      const Vec12 effective = state_.prev_target + f * (target - state_.prev_target);
      const Vec12 tau = pd_torque(effective, state_.robot.joint_pos, state_.robot.joint_vel, config_.gains,
                                  state_.params, model_);
      torque_sq += tau.squaredNorm();
      state_.robot = dynamics::step(state_.robot, tau, *terrain_, model_, state_.params, dt);
    }
  } catch (const NonFiniteState&) {
    info.nonfinite = true;
  } catch (const FootOutsideTerrain&) {
    info.out_of_bounds = true;
  }
  state_.prev_target = target;
  state_.prev_joint_pos = prev_q;
  ++state_.episode_step;
  state_.since_resample += config_.control_dt;

  const double now = state_.episode_step * config_.control_dt;
  while (state_.next_push < state_.pushes.size() && state_.pushes[state_.next_push].time <= now) {
    state_.robot = dynamics::apply_push(state_.robot, state_.pushes[state_.next_push].delta_v);
    ++state_.next_push;
  }

  const Actual6D act = measure(state_.robot, *terrain_);
  info.task = task_reward(act, state_.command, config_.reward, model_.reference_height);

  RegTerms& reg = info.reg;
  reg.action_rate = (action - state_.prev_action).squaredNorm();
  reg.torque = torque_sq / config_.substeps;
  reg.vertical_vel = state_.robot.base_lin_vel.z() * state_.robot.base_lin_vel.z();
  const dynamics::BodyPoints body = dynamics::body_points(model_, state_.robot);
  for (const auto& knee : body.knees) reg.collision += below_ground(*terrain_, knee) ? 1.0 : 0.0;
  if (config_.reward.feet_air_time > 0.0) {
    const bool moving = std::hypot(state_.command.vx, state_.command.vy) > 0.1;
    for (int leg = 0; leg < dynamics::kNumLegs; ++leg) {
      const bool contact = state_.robot.foot_contact[leg];
      const bool first_contact = contact && state_.air_time[leg] > 0.0;
      state_.air_time[leg] += config_.control_dt;
      if (first_contact && moving) reg.feet_air_time += state_.air_time[leg] - 0.5;
      if (contact) state_.air_time[leg] = 0.0;
    }
  }
  state_.prev_action = action;

  for (int i = 0; i < 8 && !info.collision; ++i) {
    // bottom face only
    if ((i & 1) == 0 && below_ground(*terrain_, body.trunk_corners[i])) info.collision = true;
  }
  for (const auto& hip : body.hips) info.collision = info.collision || below_ground(*terrain_, hip);
  info.fell = std::abs(act.roll - state_.command.roll) > config_.max_tilt ||
              std::abs(act.pitch - state_.command.pitch) > config_.max_tilt || act.height < config_.min_height;
  info.timeout = state_.episode_step >= config_.max_episode_steps;
  info.episode_length = state_.episode_step;
  info.distance = (state_.robot.base_pos.head<2>() - state_.spawn_xy).norm();

  out.done = info.timeout || info.collision || info.fell || info.nonfinite || info.out_of_bounds;
  out.reward = info.nonfinite ? 0.0 : total_reward(info.task, 0.0, reg, scaled_weights_, posture_multiplier_);

  if (!out.done && state_.since_resample >= config_.resample_interval - 1e-9) resample_command();

  out.obs = observation();
  out.amp_next = amp_features();
  return out;
}

}  // namespace palo::env
