#pragma once

#include <Eigen/Core>

#include <array>
#include <memory>
#include <vector>

#include "palo/command.hpp"
#include "palo/curricula.hpp"
#include "palo/dynamics.hpp"
#include "palo/randomization.hpp"
#include "palo/rng.hpp"
#include "palo/terrain.hpp"

namespace palo::env {

using dynamics::Vec12;
using dynamics::Vec3;

// Actor observation: yaw rate 1, pitch/roll 2, gravity 3, command 6, joint
// positions 12, joint velocities 12, previous joint positions 12. The channels
// listed add up to 48.
inline constexpr int kProprioDim = 48;
// Critic extension: base velocity 3, height scan 17, friction 1, restitution 1,
// mass 1, CoM offset 3, foot forces 12, contact flags 4.
inline constexpr int kPrivilegedDim = 42;
inline constexpr int kActionDim = 12;
// Per-state discriminator features: joints 24, height 1, base twist 6, feet 12.
inline constexpr int kAmpStateDim = 43;

using ProprioVec = Eigen::Matrix<double, kProprioDim, 1>;
using PrivilegedVec = Eigen::Matrix<double, kPrivilegedDim, 1>;
using ActionVec = Eigen::Matrix<double, kActionDim, 1>;
using AmpStateVec = Eigen::Matrix<double, kAmpStateDim, 1>;

namespace channel {
inline constexpr int kYawRate = 0;
inline constexpr int kPitch = 1;
inline constexpr int kRoll = 2;
inline constexpr int kGravity = 3;
inline constexpr int kCommand = 6;
inline constexpr int kJointPos = 12;
inline constexpr int kJointVel = 24;
inline constexpr int kPrevJointPos = 36;
}  // namespace channel

struct ObservationPair {
  ProprioVec proprio = ProprioVec::Zero();
  PrivilegedVec privileged = PrivilegedVec::Zero();
};

struct Euler {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
};

// atan2/asin Euler extraction (roll about x, pitch about y, yaw about z).
Euler quat_to_euler(const dynamics::Quat& q);

struct PdGains {
  double kp = 28.0;
  double kd = 0.7;
};

// tau = kp*(q_d - q) + kd*(0 - qdot), with randomized gain scales and the
// motor-power torque clamp.
Vec12 pd_torque(const Vec12& target, const Vec12& q, const Vec12& qdot, const PdGains& gains,
                const dynamics::DomainParams& params, const dynamics::RobotModel& model);

struct NoiseBands {
  double joint_pos = 0.01;
  double joint_vel = 0.5;
  double yaw_rate = 0.1;
  double angle = 0.02;
  double gravity = 0.05;
};

struct ObservationScales {
  double yaw_rate = 0.25;
  double lin_vel_cmd = 2.0;
  double yaw_rate_cmd = 0.25;
  double height_cmd = 5.0;
  double joint_vel = 0.05;
};

// Noise-free when `rng` is null.
ProprioVec build_observation(const dynamics::RobotState& state, const Command6D& cmd, const Vec12& prev_joint_pos,
                             const dynamics::RobotModel& model, const NoiseBands& noise = {}, Rng* rng = nullptr,
                             const ObservationScales& scales = {});

PrivilegedVec build_privileged(const dynamics::RobotState& state, const terrain::TerrainMap& terrain,
                               const dynamics::RobotModel& model, const dynamics::DomainParams& params);

AmpStateVec amp_state_features(const dynamics::RobotState& state, const terrain::TerrainMap& terrain,
                               const dynamics::RobotModel& model);

// Measured counterpart of the six command channels: planar velocity and yaw
// rate in the yaw-aligned frame, height above the terrain under the base,
// pitch and roll.
struct Actual6D {
  double vx = 0.0;
  double vy = 0.0;
  double wz = 0.0;
  double height = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
};
Actual6D measure(const dynamics::RobotState& state, const terrain::TerrainMap& terrain);

struct RewardWeights {
  double w_v = 1.0;
  double w_w = 0.5;
  double w_h = 0.3;
  double w_theta = 0.3;
  double sigma_v = 0.25;
  double sigma_w = 0.25;
  double sigma_h = 0.1;
  double sigma_theta = 0.25;
  double w_style = 0.5;
  double action_rate = 0.01;
  double torque = 2e-5;
  double vertical_vel = 1.0;
  double collision = 1.0;
  double feet_air_time = 0.0;  // gait shaping bonus, stage-1 only

  // Every weight multiplied by dt; the sigmas are untouched.
  RewardWeights scaled(double dt) const;
};

struct TaskReward {
  double r_v = 0.0;
  double r_w = 0.0;
  double r_h = 0.0;
  double r_theta = 0.0;
};

TaskReward task_reward(const Actual6D& actual, const Command6D& cmd, const RewardWeights& weights,
                       double reference_height);

// Regularizer magnitudes (non-negative); total_reward applies them as penalties.
struct RegTerms {
  double action_rate = 0.0;   // |a_t - a_{t-1}|^2
  double torque = 0.0;        // |tau|^2
  double vertical_vel = 0.0;  // v_z^2
  double collision = 0.0;     // non-foot contacts
  double feet_air_time = 0.0; // bonus
};

double total_reward(const TaskReward& task, double style, const RegTerms& reg, const RewardWeights& weights,
                    double posture_multiplier);

struct EnvConfig {
  double control_dt = 0.02;
  int substeps = 4;
  double action_scale = 0.25;
  double action_clip = 5.0;
  PdGains gains;
  int max_episode_steps = 1000;  // 4000 physics steps
  double resample_interval = 5.0;
  bool observation_noise = true;
  NoiseBands noise;
  ObservationScales scales;
  bool randomize = true;
  randomization::Ranges ranges;
  bool pushes = true;
  randomization::PushConfig push;
  double max_tilt = 1.2;
  double min_height = 0.05;
  RewardWeights reward;
  curricula::CommandOptions command;
  double spawn_drop = 0.02;
};

struct StepInfo {
  Command6D command;  // command in force during the step
  bool timeout = false;
  bool collision = false;
  bool fell = false;
  bool nonfinite = false;
  bool out_of_bounds = false;
  TaskReward task;
  RegTerms reg;
  int episode_length = 0;
  double distance = 0.0;
};

struct StepResult {
  ObservationPair obs;
  double reward = 0.0;  // without the style term
  bool done = false;
  StepInfo info;
  AmpStateVec amp_next = AmpStateVec::Zero();
};

// Complete mutable environment state (everything needed to resume bit-exactly
// except the shared, regenerable terrain).
struct EnvState {
  dynamics::RobotState robot;
  dynamics::DomainParams params;
  Command6D command;
  Vec12 prev_joint_pos = Vec12::Zero();
  ActionVec prev_action = ActionVec::Zero();
  Vec12 prev_target = Vec12::Zero();
  int episode_step = 0;
  double since_resample = 0.0;
  std::vector<randomization::PushEvent> pushes;
  std::size_t next_push = 0;
  std::array<double, dynamics::kNumLegs> air_time{};
  Eigen::Vector2d spawn_xy = Eigen::Vector2d::Zero();
  curricula::TerrainAssignment terrain;
  int terrain_variant = 0;
  Rng rng;
};

class Env {
 public:
  Env(dynamics::RobotModel model, EnvConfig config, Rng rng);

  // Start a new episode on `terrain`.
  void reset(std::shared_ptr<const terrain::TerrainMap> terrain, curricula::TerrainAssignment assignment,
             int variant = 0);

  StepResult step(const ActionVec& action);

  ObservationPair observation();
  AmpStateVec amp_features() const;
  Actual6D actual() const;

  void set_command(const Command6D& cmd) { state_.command = cmd; }
  void set_grid(const curricula::CommandGrid& grid) { grid_ = grid; }
  void set_posture_multiplier(double m) { posture_multiplier_ = m; }
  void set_push_config(const randomization::PushConfig& push) { config_.push = push; }
  void set_resample_interval(double seconds) { config_.resample_interval = seconds; }
  void set_domain_params(const dynamics::DomainParams& params) { state_.params = params; }

  const EnvState& state() const { return state_; }
  EnvState& mutable_state() { return state_; }
  const dynamics::RobotModel& model() const { return model_; }
  const EnvConfig& config() const { return config_; }
  const curricula::CommandGrid& grid() const { return grid_; }
  const terrain::TerrainMap& terrain() const { return *terrain_; }
  std::shared_ptr<const terrain::TerrainMap> terrain_ptr() const { return terrain_; }
  void restore(EnvState state, std::shared_ptr<const terrain::TerrainMap> terrain) {
    state_ = std::move(state);
    terrain_ = std::move(terrain);
  }

 private:
  void resample_command();

  dynamics::RobotModel model_;
  EnvConfig config_;
  RewardWeights scaled_weights_;
  curricula::CommandGrid grid_;
  double posture_multiplier_ = 1.0;
  std::shared_ptr<const terrain::TerrainMap> terrain_;
  EnvState state_;
};

}  // namespace palo::env
