#include <doctest.h>

#include <cmath>
#include <numbers>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "palo/env.hpp"

using namespace palo;
using namespace palo::env;
using dynamics::Quat;

namespace {

dynamics::RobotState standing() {
  const auto m = dynamics::RobotModel::a1_like();
  return dynamics::rest_state(m, {}, 0.0);
}

Quat from_euler(double roll, double pitch, double yaw) {
  return Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
              Eigen::AngleAxisd(roll, Vec3::UnitX()));
}

}  // namespace

TEST_CASE("quaternion to Euler angles") {
  SUBCASE("identity") {
    const Euler e = quat_to_euler(Quat::Identity());
    CHECK(e.roll == 0.0);
    CHECK(e.pitch == 0.0);
    CHECK(e.yaw == 0.0);
  }
  SUBCASE("quarter turn about x") {
    const double h = std::sqrt(2.0) / 2.0;
    const Euler e = quat_to_euler(Quat(h, h, 0.0, 0.0));
    CHECK(e.roll == doctest::Approx(std::numbers::pi / 2.0).epsilon(1e-12));
    CHECK(std::abs(e.pitch) < 1e-12);
    CHECK(std::abs(e.yaw) < 1e-12);
  }
  SUBCASE("agrees with the rotation-matrix oracle") {
    Rng rng(4);
    for (int i = 0; i < 500; ++i) {
      const Quat q = from_euler(rng.uniform(-3.0, 3.0), rng.uniform(-1.3, 1.3), rng.uniform(-3.0, 3.0));
      const auto ref = oracle::euler_from_matrix(q.toRotationMatrix());
      const Euler e = quat_to_euler(q);
      CHECK(std::abs(std::remainder(e.roll - ref[0], 2 * std::numbers::pi)) < 1e-9);
      CHECK(std::abs(e.pitch - ref[1]) < 1e-9);
      CHECK(std::abs(std::remainder(e.yaw - ref[2], 2 * std::numbers::pi)) < 1e-9);
    }
  }
}

TEST_CASE("PD torque") {
  const auto m = dynamics::RobotModel::a1_like();
  const PdGains g{28.0, 0.7};
  const Vec12 q = m.default_joint_pos;
  CHECK(pd_torque(q, q, Vec12::Zero(), g, {}, m).isZero(0.0));
  CHECK(pd_torque(q.array() + 0.1, q, Vec12::Zero(), g, {}, m).isApproxToConstant(2.8, 1e-12));
  CHECK(pd_torque(q.array() + 5.0, q, Vec12::Zero(), g, {}, m).isApproxToConstant(m.torque_limit, 1e-12));
}

TEST_CASE("observation layout") {
  const auto m = dynamics::RobotModel::a1_like();
  dynamics::RobotState s = standing();

  SUBCASE("upright rest") {
    const ProprioVec o = build_observation(s, {}, s.joint_pos, m);
    CHECK(o.size() == kProprioDim);
    CHECK(o.head<3>().isZero(1e-12));
    CHECK(o.segment<3>(channel::kGravity).isApprox(Vec3(0, 0, -1)));
    CHECK(o.segment<12>(channel::kJointPos).isZero(0.0));
  }
  SUBCASE("rolled base") {
    s.base_quat = from_euler(0.3, 0.0, 0.0);
    const ProprioVec o = build_observation(s, {}, s.joint_pos, m);
    CHECK(o[channel::kRoll] == doctest::Approx(0.3).epsilon(1e-12));
    const Vec3 expected = s.base_quat.toRotationMatrix().transpose() * Vec3(0, 0, -1);
    CHECK(std::abs(o[channel::kGravity + 1]) == doctest::Approx(std::sin(0.3)).epsilon(1e-12));
    CHECK(o.segment<3>(channel::kGravity).isApprox(expected, 1e-12));
  }
  SUBCASE("noise stays inside its bands") {
    s.base_quat = from_euler(0.3, 0.0, 0.0);
    const ProprioVec clean = build_observation(s, {}, s.joint_pos, m);
    Rng rng(1);
    const NoiseBands bands;
    for (int i = 0; i < 200; ++i) {
      const ProprioVec noisy = build_observation(s, {}, s.joint_pos, m, bands, &rng);
      CHECK(std::abs(noisy[channel::kRoll] - clean[channel::kRoll]) <= bands.angle);
      CHECK(std::abs(noisy[channel::kGravity + 1] - clean[channel::kGravity + 1]) <= bands.gravity);
      // command channels are never perturbed
      CHECK(noisy.segment<6>(channel::kCommand) == clean.segment<6>(channel::kCommand));
    }
  }
  SUBCASE("pure function without noise and blind to yaw") {
    s.base_quat = from_euler(0.1, -0.2, 0.0);
    s.base_ang_vel = Vec3(0.1, 0.2, 0.3);
    const Command6D cmd{0.4, 0.1, -0.2, 0.05, 0.1, 0.0};
    const ProprioVec a = build_observation(s, cmd, s.joint_pos, m);
    CHECK(a == build_observation(s, cmd, s.joint_pos, m));
    dynamics::RobotState turned = s;
    turned.base_quat = from_euler(0.1, -0.2, 1.1);
    turned.base_pos += Vec3(3.0, -2.0, 0.0);
    CHECK(build_observation(turned, cmd, s.joint_pos, m).isApprox(a, 1e-12));
  }
}

TEST_CASE("previous joint positions are copied from the last step") {
  auto map = fixture::flat_map();
  Env e(dynamics::RobotModel::a1_like(), fixture::quiet_env_config(), Rng(3));
  e.reset(map, {});
  Rng rng(4);
  ProprioVec last = e.observation().proprio;
  for (int k = 0; k < 20; ++k) {
    ActionVec a;
    for (int j = 0; j < kActionDim; ++j) a[j] = 0.3 * rng.normal();
    const StepResult r = e.step(a);
    CHECK(r.obs.proprio.segment<12>(channel::kPrevJointPos) == last.segment<12>(channel::kJointPos));
    last = r.obs.proprio;
  }
}

TEST_CASE("task reward points and shape") {
  RewardWeights w;
  const double ref = 0.3;
  const Command6D cmd{0.5, 0.0, 0.3, 0.0, 0.1, 0.0};
  Actual6D a{0.5, 0.0, 0.3, ref, 0.1, 0.0};
  TaskReward r = task_reward(a, cmd, w, ref);
  CHECK(r.r_v == 1.0);
  CHECK(r.r_w == 1.0);
  CHECK(r.r_h == 1.0);
  CHECK(r.r_theta == 1.0);

  a.vy = std::sqrt(w.sigma_v);
  CHECK(task_reward(a, cmd, w, ref).r_v == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  a = {0.5, 0.0, 0.3, ref - 0.05, 0.1, 0.0};
  CHECK(task_reward(a, cmd, w, ref).r_h == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));

  // Each component is in (0, 1] and strictly decreasing in its error.
  double prev = 2.0;
  for (double err = 0.0; err < 3.0; err += 0.25) {
    a = {0.5 + err, 0.0, 0.3, ref + err, 0.1 + err, 0.0};
    r = task_reward(a, cmd, w, ref);
    CHECK(r.r_v > 0.0);
    CHECK(r.r_v <= 1.0);
    CHECK(r.r_v < prev);
    CHECK(r.r_h > 0.0);
    CHECK(r.r_theta > 0.0);
    prev = r.r_v;
  }
}

TEST_CASE("height tracking is relative to the terrain") {
  dynamics::RobotState s = standing();
  terrain::TerrainMap low(terrain::Kind::kRoughFlat, 0, 0, 40, 40, 0.05, Eigen::Vector2d(-1, -1));
  terrain::TerrainMap high = low;
  for (int iy = 0; iy < 40; ++iy) {
    for (int ix = 0; ix < 40; ++ix) high.cell(ix, iy) = 0.5;
  }
  dynamics::RobotState raised = s;
  raised.base_pos.z() += 0.5;
  CHECK(measure(raised, high).height == doctest::Approx(measure(s, low).height).epsilon(1e-12));
}

TEST_CASE("total reward composition") {
  RewardWeights w;
  w.w_v = 1.0;
  w.w_style = 0.5;
  const TaskReward only_v{1.0, 0.0, 0.0, 0.0};
  CHECK(total_reward(only_v, 0.0, {}, w, 1.0) == doctest::Approx(1.0));
  CHECK(total_reward(only_v, 0.75, {}, w, 1.0) == doctest::Approx(1.375));
  const TaskReward posture{0.0, 0.0, 0.3, 0.6};
  CHECK(total_reward(posture, 0.0, {}, w, 0.0) == 0.0);
  CHECK(total_reward(posture, 0.0, {}, w, 1.0) == doctest::Approx(w.w_h * 0.3 + w.w_theta * 0.6));
  RegTerms reg;
  reg.collision = 2.0;
  CHECK(total_reward({}, 0.0, reg, w, 1.0) == doctest::Approx(-2.0 * w.collision));

  const RewardWeights scaled = w.scaled(0.02);
  CHECK(scaled.w_v == doctest::Approx(0.02));
  CHECK(scaled.sigma_v == w.sigma_v);
}

TEST_CASE("zero action keeps the robot standing until the time limit") {
  auto map = fixture::flat_map();
  EnvConfig cfg = fixture::quiet_env_config();
  Env e(dynamics::RobotModel::a1_like(), cfg, Rng(1));
  e.reset(map, {});
  const double h0 = e.actual().height;
  int steps = 0;
  StepResult r;
  do {
    r = e.step(ActionVec::Zero());
    ++steps;
  } while (!r.done);
  CHECK(steps == cfg.max_episode_steps);
  CHECK(r.info.timeout);
  CHECK_FALSE(r.info.fell);
  CHECK_FALSE(r.info.collision);
  CHECK(std::abs(e.actual().height - h0) < 0.02);
}

TEST_CASE("trunk on the ground ends the episode as a collision") {
  auto map = fixture::flat_map();
  Env e(dynamics::RobotModel::a1_like(), fixture::quiet_env_config(), Rng(1));
  e.reset(map, {});
  auto& s = e.mutable_state().robot;
  s.base_pos.z() = 0.02;
  for (int leg = 0; leg < dynamics::kNumLegs; ++leg) {
    s.joint_pos[3 * leg + 1] = 0.0;
    s.joint_pos[3 * leg + 2] = -2.69;
  }
  const StepResult r = e.step(ActionVec::Zero());
  CHECK(r.done);
  CHECK(r.info.collision);
}

TEST_CASE("a push changes neither the command nor the gravity reading") {
  auto map = fixture::flat_map();
  Env e(dynamics::RobotModel::a1_like(), fixture::quiet_env_config(), Rng(1));
  e.reset(map, {});
  e.set_command({0.3, 0, 0, 0, 0, 0});
  const ObservationPair before = e.observation();
  e.mutable_state().robot = dynamics::apply_push(e.state().robot, Vec3(0.5, 0.0, 0.0));
  const ObservationPair after = e.observation();
  CHECK(after.proprio.segment<6>(channel::kCommand) == before.proprio.segment<6>(channel::kCommand));
  CHECK(after.proprio.segment<3>(channel::kGravity) == before.proprio.segment<3>(channel::kGravity));
  CHECK(after.privileged.head<3>() != before.privileged.head<3>());
}

TEST_CASE("privileged and AMP features are finite and sized") {
  auto map = fixture::flat_map();
  Env e(dynamics::RobotModel::a1_like(), EnvConfig{}, Rng(2));
  e.reset(map, {});
  Rng rng(5);
  for (int k = 0; k < 50; ++k) {
    ActionVec a;
    for (int j = 0; j < kActionDim; ++j) a[j] = 0.5 * rng.normal();
    const StepResult r = e.step(a);
    CHECK(r.obs.proprio.allFinite());
    CHECK(r.obs.privileged.allFinite());
    CHECK(r.amp_next.allFinite());
    if (r.done) e.reset(map, {});
  }
}
