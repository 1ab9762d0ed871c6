#include "criteria.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numbers>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "oracles.hpp"
#include "fixtures.hpp"
#include "palo/amp.hpp"
#include "palo/curricula.hpp"
#include "palo/dynamics.hpp"
#include "palo/env.hpp"
#include "palo/nn.hpp"
#include "palo/randomization.hpp"
#include "palo/rl.hpp"
#include "palo/trainer.hpp"

namespace palo::acceptance {

namespace {

using Clock = std::chrono::steady_clock;
using nn::Matrix;
using nn::Vector;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double wrap_angle(double a) { return std::remainder(a, 2.0 * std::numbers::pi); }

// Collects failed checks; a criterion passes when none failed.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    ++total_;
    if (!ok) failures_.push_back(what);
  }
  Outcome outcome(const std::string& summary) const {
    Outcome o;
    o.pass = failures_.empty();
    std::ostringstream s;
    s << summary << " [" << (total_ - failures_.size()) << "/" << total_ << " checks]";
    for (const auto& f : failures_) s << "; FAILED " << f;
    o.detail = s.str();
    return o;
  }

 private:
  int total_ = 0;
  std::vector<std::string> failures_;
};

// ---------------------------------------------------------------------------

Outcome formula_oracles() {
  const auto t0 = Clock::now();
  Checks c;

  Rng rng(20240601);
  double worst = 0.0;
  int tested = 0;
  while (tested < 1000) {
    Eigen::Vector4d v(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    v.normalize();
    const dynamics::Quat q(v[0], v[1], v[2], v[3]);
    const auto ref = oracle::euler_from_matrix(q.toRotationMatrix());
    if (std::abs(ref[1]) >= 80.0 * std::numbers::pi / 180.0) continue;
    const env::Euler e = env::quat_to_euler(q);
    worst = std::max({worst, std::abs(wrap_angle(e.roll - ref[0])), std::abs(e.pitch - ref[1]),
                      std::abs(wrap_angle(e.yaw - ref[2]))});
    ++tested;
  }
  c.expect(worst <= 1e-9, fmt::format("euler max error {:.3e}", worst));

  const auto model = dynamics::RobotModel::a1_like();
  dynamics::DomainParams nominal;
  const env::PdGains gains{28.0, 0.7};
  const dynamics::Vec12 q = model.default_joint_pos;
  const dynamics::Vec12 zero = dynamics::Vec12::Zero();
  const dynamics::Vec12 ones = dynamics::Vec12::Ones();
  auto all_equal = [](const dynamics::Vec12& v, double x) { return ((v.array() - x).abs() <= 1e-12).all(); };
  c.expect(all_equal(env::pd_torque(q, q, zero, gains, nominal, model), 0.0), "pd zero error");
  c.expect(all_equal(env::pd_torque(q.array() + 0.1, q, zero, gains, nominal, model), 28.0 * 0.1), "pd 0.1 rad");
  c.expect(all_equal(env::pd_torque(q, q, ones * 2.0, gains, nominal, model), -0.7 * 2.0), "pd damping");
  dynamics::DomainParams scaled;
  scaled.p_gain_scale = 1.1;
  scaled.d_gain_scale = 0.9;
  c.expect(all_equal(env::pd_torque(q.array() + 0.05, q, ones * 0.5, gains, scaled, model),
                     28.0 * 1.1 * 0.05 - 0.7 * 0.9 * 0.5),
           "pd scaled gains");
  c.expect(all_equal(env::pd_torque(q.array() + 2.0, q, zero, gains, nominal, model), model.torque_limit),
           "pd torque clamp");
  scaled.motor_power_scale = 0.8;
  c.expect(all_equal(env::pd_torque(q.array() - 2.0, q, zero, gains, scaled, model), -0.8 * model.torque_limit),
           "pd motor power clamp");

  env::RewardWeights w;
  const double ref_h = model.reference_height;
  env::Actual6D perfect{0.3, -0.1, 0.2, ref_h + 0.02, 0.1, -0.05};
  const Command6D cmd{0.3, -0.1, 0.2, 0.02, 0.1, -0.05};
  const env::TaskReward tr_perfect = env::task_reward(perfect, cmd, w, ref_h);
  c.expect(tr_perfect.r_v == 1.0 && tr_perfect.r_w == 1.0 && std::abs(tr_perfect.r_h - 1.0) <= 1e-12 &&
               tr_perfect.r_theta == 1.0,
           "perfect tracking");
  env::Actual6D off = perfect;
  off.vx += std::sqrt(w.sigma_v);
  c.expect(std::abs(env::task_reward(off, cmd, w, ref_h).r_v - std::exp(-1.0)) <= 1e-12, "R_v at sigma");
  off = perfect;
  off.height += 0.05;
  c.expect(std::abs(env::task_reward(off, cmd, w, ref_h).r_h - std::exp(-0.5)) <= 1e-12, "R_h at 0.05 m");
  c.expect(amp::style_reward(0.0) == 0.75 && amp::style_reward(1.0) == 1.0 && amp::style_reward(-1.0) == 0.0,
           "style reward points");
  const env::TaskReward only_v{1.0, 0.0, 0.0, 0.0};
  env::RewardWeights unit;
  unit.w_v = 1.0;
  unit.w_style = 0.5;
  c.expect(std::abs(env::total_reward(only_v, 0.0, {}, unit, 1.0) - 1.0) <= 1e-12, "r = 1");
  c.expect(std::abs(env::total_reward(only_v, 0.75, {}, unit, 1.0) - 1.375) <= 1e-12, "r = 1.375");
  const env::TaskReward posture_only{0.0, 0.0, 0.4, 0.7};
  c.expect(env::total_reward(posture_only, 0.0, {}, unit, 0.0) == 0.0, "stage 0 gates posture");

  const double elapsed = seconds_since(t0);
  c.expect(elapsed < 1.0, fmt::format("runtime {:.3f} s", elapsed));
  return c.outcome(fmt::format("euler max error {:.2e} over {} quaternions, {:.3f} s", worst, tested, elapsed));
}

// ---------------------------------------------------------------------------

template <typename Fn>
oracle::GradientCheck fd_check(const Eigen::VectorXd& x, const Eigen::VectorXd& analytic, Fn&& f) {
  const Eigen::VectorXd numeric = oracle::numeric_gradient(f, x, 1e-4);
  return oracle::compare_gradients(analytic, numeric, 1e-4, 1e-8);
}

std::string describe(const std::string& name, const oracle::GradientCheck& g) {
  return fmt::format("{} (worst excess {:.2e} at {}, max |g| {:.2e})", name, g.worst_excess, g.worst_index, g.max_abs);
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  Checks c;
  Rng rng(7);
  std::vector<std::string> notes;

  // Plain MLPs with each smooth hidden activation: parameters and inputs.
  for (const nn::Activation act : {nn::Activation::kElu, nn::Activation::kTanh}) {
    nn::Mlp<double> net({7, 9, 8, 3}, act, nn::Activation::kTanh);
    net.init(rng, 1.0, 1.0);
    Matrix<double> x(7, 5), weights(3, 5);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < weights.size(); ++i) weights.data()[i] = rng.normal();
    auto loss = [&](const nn::Mlp<double>& n, const Matrix<double>& in) {
      return (n.forward(in).array() * weights.array()).sum();
    };
    typename nn::Mlp<double>::Cache cache;
    net.forward(x, &cache);
    Vector<double> grad = Vector<double>::Zero(net.param_count());
    const Matrix<double> dx = net.backward(cache, weights, grad);
    const auto gp = fd_check(net.params(), grad, [&](const Eigen::VectorXd& p) {
      nn::Mlp<double> n = net;
      n.params() = p;
      return loss(n, x);
    });
    const Eigen::VectorXd x_flat = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
    const auto gx = fd_check(x_flat, Eigen::Map<const Eigen::VectorXd>(dx.data(), dx.size()),
                             [&](const Eigen::VectorXd& v) {
                               return loss(net, Eigen::Map<const Matrix<double>>(v.data(), 7, 5));
                             });
    c.expect(gp.ok(), describe("mlp params " + nn::to_string(act), gp));
    c.expect(gx.ok(), describe("mlp inputs " + nn::to_string(act), gx));
  }

  // Actor-critic through the full PPO objective.
  rl::NetworkConfig nc;
  nc.history = 2;
  nc.encoder_hidden = {10};
  nc.latent = 4;
  nc.actor_hidden = {10};
  nc.critic_hidden = {10};
  nc.init_log_std = -0.5;
  rl::ActorCritic<double> net(nc);
  net.init(rng);
  Vector<double> flat = net.flat_params();
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] += 0.2 * rng.normal();
  net.set_flat_params(flat);

  const int batch = 12;
  rl::RolloutBatch<double> b;
  b.window.resize(nc.window_dim(), batch);
  b.command.resize(rl::kCommandDim, batch);
  b.critic_in.resize(rl::kCriticInputDim, batch);
  for (auto* m : {&b.window, &b.command, &b.critic_in}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = rng.normal();
  }
  const Matrix<double> mu = net.actor_forward(b.window, b.command);
  b.actions = mu;
  for (Eigen::Index i = 0; i < b.actions.size(); ++i) b.actions.data()[i] += 0.6 * rng.normal();
  const auto lp = nn::gaussian_log_prob<double>(mu, net.log_std, b.actions);
  b.log_prob.resize(batch);
  b.values.resize(batch);
  b.advantages.resize(batch);
  b.returns.resize(batch);
  for (int i = 0; i < batch; ++i) {
    // Old log-probabilities spread so both clipped and unclipped samples occur.
    b.log_prob[i] = lp[i] + 0.4 * rng.normal();
    b.values[i] = rng.normal();
    b.advantages[i] = rng.normal();
    b.returns[i] = rng.normal();
  }
  std::vector<Eigen::Index> index(batch);
  std::iota(index.begin(), index.end(), 0);
  rl::PpoConfig pc;
  Vector<double> grad;
  const rl::LossParts parts = rl::ppo_loss<double>(net, b, index, pc, &grad);
  const Eigen::VectorXd numeric = oracle::numeric_gradient(
      [&](const Eigen::VectorXd& p) {
        rl::ActorCritic<double> n = net;
        n.set_flat_params(p);
        return rl::ppo_loss<double>(n, b, index, pc, nullptr).total;
      },
      net.flat_params(), 1e-4);
  const Eigen::Index enc = net.encoder.param_count();
  const Eigen::Index act = net.actor.param_count();
  const Eigen::Index ls = net.log_std.size();
  const Eigen::Index cri = net.critic.param_count();
  const auto g_enc = oracle::compare_gradients(grad.segment(0, enc), numeric.segment(0, enc));
  const auto g_act = oracle::compare_gradients(grad.segment(enc, act), numeric.segment(enc, act));
  const auto g_ls = oracle::compare_gradients(grad.segment(net.log_std_offset(), ls),
                                              numeric.segment(net.log_std_offset(), ls));
  const auto g_cri = oracle::compare_gradients(grad.segment(net.critic_offset(), cri),
                                               numeric.segment(net.critic_offset(), cri));
  c.expect(g_enc.ok(), describe("encoder via PPO loss", g_enc));
  c.expect(g_act.ok(), describe("actor via PPO loss", g_act));
  c.expect(g_ls.ok(), describe("log_std via PPO loss", g_ls));
  c.expect(g_cri.ok(), describe("critic via value loss", g_cri));
  c.expect(parts.clip_fraction > 0.0 && parts.clip_fraction < 1.0,
           fmt::format("batch mixes clipped and unclipped samples (clip fraction {:.2f})", parts.clip_fraction));

  // Discriminator with the gradient penalty.
  nn::Mlp<double> disc = amp::make_discriminator<double>({16, 8});
  disc.init(rng, std::sqrt(2.0), 1.0);
  Matrix<double> expert(amp::kPairDim, 6), policy(amp::kPairDim, 6);
  for (Eigen::Index i = 0; i < expert.size(); ++i) expert.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < policy.size(); ++i) policy.data()[i] = rng.normal() + 0.5;
  Vector<double> dgrad = Vector<double>::Zero(disc.param_count());
  const amp::AmpMetrics am = amp::amp_loss<double>(disc, expert, policy, 10.0, &dgrad);
  const auto g_disc = fd_check(disc.params(), dgrad, [&](const Eigen::VectorXd& p) {
    nn::Mlp<double> d = disc;
    d.params() = p;
    return amp::amp_loss<double>(d, expert, policy, 10.0, nullptr).loss;
  });
  c.expect(g_disc.ok(), describe("discriminator with gradient penalty", g_disc));
  c.expect(am.grad_penalty > 0.0, "gradient penalty active");

  const double elapsed = seconds_since(t0);
  c.expect(elapsed < 60.0, fmt::format("runtime {:.1f} s", elapsed));
  return c.outcome(fmt::format("{} actor-critic + {} discriminator parameters checked, {:.1f} s",
                               net.param_count(), disc.param_count(), elapsed));
}

// ---------------------------------------------------------------------------

Outcome clipping_property() {
  Checks c;
  Rng rng(11);
  const int n = 20000;
  const double eps = 0.2;
  std::vector<double> lp_new(n), lp_old(n), adv(n);
  for (int i = 0; i < n; ++i) {
    lp_new[i] = rng.normal(-5.0, 2.0);
    const double ratio = rng.uniform(0.3, 1.8);
    lp_old[i] = lp_new[i] - std::log(ratio);
    adv[i] = rng.normal();
  }
  const rl::PolicyLoss pl = rl::ppo_policy_loss(lp_new, lp_old, adv, eps);
  int clipped = 0;
  int clipped_nonzero = 0;
  int free_wrong = 0;
  for (int i = 0; i < n; ++i) {
    const double r = std::exp(lp_new[i] - lp_old[i]);
    const bool in_clip = (adv[i] > 0.0 && r > 1.0 + eps) || (adv[i] < 0.0 && r < 1.0 - eps);
    if (in_clip) {
      ++clipped;
      if (pl.grad[i] != 0.0) ++clipped_nonzero;
    } else {
      const double expected = -r * adv[i] / n;
      if (std::abs(pl.grad[i] - expected) > 1e-12 * std::max(1.0, std::abs(expected))) ++free_wrong;
    }
  }
  c.expect(clipped > n / 10, fmt::format("{} clipped samples", clipped));
  c.expect(clipped_nonzero == 0, fmt::format("{} clipped samples with non-zero gradient", clipped_nonzero));
  c.expect(free_wrong == 0, fmt::format("{} unclipped samples with a wrong gradient", free_wrong));

  // End to end: when every sample sits in a clipped region the encoder and
  // actor receive exactly zero gradient.
  rl::NetworkConfig nc;
  nc.history = 2;
  nc.encoder_hidden = {8};
  nc.latent = 4;
  nc.actor_hidden = {8};
  nc.critic_hidden = {8};
  rl::ActorCritic<double> net(nc);
  net.init(rng);
  const int m = 32;
  rl::RolloutBatch<double> b;
  b.window = Matrix<double>::Random(nc.window_dim(), m);
  b.command = Matrix<double>::Random(rl::kCommandDim, m);
  b.critic_in = Matrix<double>::Random(rl::kCriticInputDim, m);
  const Matrix<double> mu = net.actor_forward(b.window, b.command);
  b.actions = mu + 0.3 * Matrix<double>::Random(env::kActionDim, m);
  const auto lp = nn::gaussian_log_prob<double>(mu, net.log_std, b.actions);
  b.log_prob.resize(m);
  b.advantages.resize(m);
  b.values = Eigen::VectorXd::Zero(m);
  b.returns = Eigen::VectorXd::Zero(m);
  for (int i = 0; i < m; ++i) {
    const bool positive = i % 2 == 0;
    b.advantages[i] = positive ? 1.0 + rng.uniform() : -1.0 - rng.uniform();
    const double ratio = positive ? rng.uniform(1.3, 2.0) : rng.uniform(0.2, 0.7);
    b.log_prob[i] = lp[i] - std::log(ratio);
  }
  std::vector<Eigen::Index> index(m);
  std::iota(index.begin(), index.end(), 0);
  rl::PpoConfig pc;
  pc.entropy_coef = 0.0;
  pc.value_coef = 0.0;
  Vector<double> grad;
  rl::ppo_loss<double>(net, b, index, pc, &grad);
  const Eigen::Index policy_params = net.critic_offset();
  c.expect((grad.head(policy_params).array() == 0.0).all(), "end-to-end policy gradient exactly zero");

  return c.outcome(fmt::format("{} of {} samples clipped, all with zero gradient", clipped, n));
}

// ---------------------------------------------------------------------------

Outcome curriculum_suite() {
  Checks c;
  using curricula::TerrainAssignment;
  using terrain::Kind;
  Rng rng(3);
  const std::vector<Kind> kinds{Kind::kWavy, Kind::kRoughSlope, Kind::kStairsUp, Kind::kStairsDown,
                                Kind::kDiscreteObstacles};
  const double tile = 8.0;
  c.expect(curricula::terrain_update({Kind::kWavy, 3}, 4.5, tile, rng, kinds) == TerrainAssignment{Kind::kWavy, 4},
           "promote 4.5 m on 8 m tile");
  c.expect(curricula::terrain_update({Kind::kWavy, 3}, 2.0, tile, rng, kinds) == TerrainAssignment{Kind::kWavy, 2},
           "demote 2 m");
  c.expect(curricula::terrain_update({Kind::kWavy, 0}, 1.0, tile, rng, kinds) == TerrainAssignment{Kind::kWavy, 0},
           "floor at level 0");
  c.expect(curricula::terrain_update({Kind::kWavy, 3}, 4.0, tile, rng, kinds) == TerrainAssignment{Kind::kWavy, 3},
           "exactly half keeps the level");
  std::vector<int> seen(terrain::kNumKinds, 0);
  bool capped = true;
  for (int i = 0; i < 500; ++i) {
    const TerrainAssignment t = curricula::terrain_update({Kind::kWavy, 9}, 5.0, tile, rng, kinds);
    capped = capped && t.level == 9;
    ++seen[static_cast<int>(t.kind)];
  }
  c.expect(capped, "level 9 stays 9");
  c.expect(std::count_if(seen.begin(), seen.end(), [](int s) { return s > 0; }) == 5 &&
               seen[static_cast<int>(Kind::kRoughFlat)] == 0,
           "top-level promotion redraws the kind from the configured set");

  c.expect(curricula::reward_stage(0, 1000) == curricula::RewardStage{0, 0.0}, "stage at update 0");
  c.expect(curricula::reward_stage(149, 1000) == curricula::RewardStage{0, 0.0}, "stage just before t1");
  c.expect(curricula::reward_stage(150, 1000) == curricula::RewardStage{1, 0.0}, "stage at t1");
  c.expect(curricula::reward_stage(275, 1000) == curricula::RewardStage{1, 0.5}, "ramp midpoint");
  c.expect(curricula::reward_stage(400, 1000) == curricula::RewardStage{2, 1.0}, "stage at t2");
  c.expect(curricula::reward_stage(999, 1000) == curricula::RewardStage{2, 1.0}, "last update");

  curricula::CommandGrid grid;
  curricula::CommandOptions opts;
  const int samples = 100000;
  bool up_ok = true, down_ok = true, flat_ok = true, heights_ok = true, roll_ok = true;
  for (int i = 0; i < samples; ++i) {
    const Command6D up = curricula::sample_command(Kind::kStairsUp, grid, rng, opts);
    const Command6D down = curricula::sample_command(Kind::kStairsDown, grid, rng, opts);
    const Command6D flat = curricula::sample_command(Kind::kRoughFlat, grid, rng, opts);
    up_ok = up_ok && up.pitch >= -limits::kPitch && up.pitch <= 0.0;
    down_ok = down_ok && down.pitch >= 0.0 && down.pitch <= limits::kPitch;
    flat_ok = flat_ok && std::abs(flat.pitch) <= limits::kPitch;
    for (const Command6D* s : {&up, &down, &flat}) {
      const double h = opts.reference_height + s->dh;
      heights_ok = heights_ok && h >= limits::kMinHeight && h <= limits::kMaxHeight;
      roll_ok = roll_ok && std::abs(s->roll) <= limits::kRoll;
    }
  }
  c.expect(up_ok, "stairs up pitch in [-pi/4, 0]");
  c.expect(down_ok, "stairs down pitch in [0, pi/4]");
  c.expect(flat_ok, "flat pitch in [-pi/4, pi/4]");
  c.expect(heights_ok, "heights in [0.1, 0.4] m");
  c.expect(roll_ok, "roll in [-pi/6, pi/6]");

  const curricula::CommandGrid g0;
  const curricula::CommandGrid grown = curricula::grid_update(0.85, g0, 0.8);
  c.expect(grown.vx == Range{-0.6, 0.6} && grown.vy == Range{-0.4, 0.4} && grown.wz == Range{-0.6, 0.6},
           "0.85 expands by one step");
  c.expect(curricula::grid_update(0.8, g0, 0.8) == g0, "exactly 80% does not expand");
  c.expect(curricula::grid_update(0.5, g0, 0.8) == g0, "0.5 leaves the grid");
  curricula::CommandGrid full = g0;
  full.vx = full.cap_vx;
  full.vy = full.cap_vy;
  full.wz = full.cap_wz;
  c.expect(curricula::grid_update(0.99, full, 0.8) == full, "grid at the caps stays");
  curricula::CommandGrid near = g0;
  near.vx = {-1.45, 1.45};
  c.expect(curricula::grid_update(0.9, near, 0.8).vx == near.cap_vx, "expansion stops at the cap");

  return c.outcome("terrain, reward and command curricula");
}

// ---------------------------------------------------------------------------

Outcome randomization() {
  Checks c;
  Rng rng(99);
  const randomization::Ranges r;
  const int n = 10000;
  std::vector<std::vector<double>> fields(11);
  bool inside = true;
  for (int i = 0; i < n; ++i) {
    const dynamics::DomainParams p = randomization::sample_domain_params(rng, r);
    inside = inside && randomization::within(p, r) && r.ground_friction.contains(p.ground_friction) &&
             r.restitution.contains(p.restitution) && r.load_mass.contains(p.load_mass) &&
             r.link_mass_scale.contains(p.link_mass_scale) && r.com_offset.contains(p.com_offset.x()) &&
             r.com_offset.contains(p.com_offset.y()) && r.com_offset.contains(p.com_offset.z()) &&
             r.p_gain_scale.contains(p.p_gain_scale) && r.d_gain_scale.contains(p.d_gain_scale) &&
             r.motor_power_scale.contains(p.motor_power_scale) && r.action_delay.contains(p.action_delay);
    const double v[] = {p.ground_friction, p.restitution,  p.load_mass,         p.link_mass_scale,
                        p.com_offset.x(),  p.com_offset.y(), p.com_offset.z(),  p.p_gain_scale,
                        p.d_gain_scale,    p.motor_power_scale, p.action_delay};
    for (std::size_t k = 0; k < fields.size(); ++k) fields[k].push_back(v[k]);
  }
  c.expect(inside, "all samples inside the table bounds");
  const Range bounds[] = {r.ground_friction, r.restitution,  r.load_mass,    r.link_mass_scale,
                          r.com_offset,      r.com_offset,   r.com_offset,   r.p_gain_scale,
                          r.d_gain_scale,    r.motor_power_scale, r.action_delay};
  const char* names[] = {"friction", "restitution", "load", "link_mass", "com_x", "com_y",
                         "com_z",    "kp_scale",    "kd_scale", "motor", "delay"};
  double worst = 0.0;
  for (std::size_t k = 0; k < fields.size(); ++k) {
    const double d = oracle::ks_uniform(fields[k], bounds[k].lo, bounds[k].hi);
    worst = std::max(worst, d);
    c.expect(d < 0.02, fmt::format("KS {} = {:.4f}", names[k], d));
  }
  return c.outcome(fmt::format("{} samples, worst KS {:.4f}", n, worst));
}

// ---------------------------------------------------------------------------

Outcome dynamics_sanity() {
  const auto t0 = Clock::now();
  Checks c;
  using namespace dynamics;
  const RobotModel model = RobotModel::a1_like();
  const DomainParams params;
  const auto map = fixture::flat_map(10.0);
  const double dt = 0.005;

  // Settle: zero torques from the rest state for 1 s.
  RobotState s = rest_state(model, params, 0.0);
  const Vec3 start = s.base_pos;
  double drift = 0.0;
  for (int k = 0; k < 200; ++k) {
    s = step(s, Vec12::Zero(), *map, model, params, dt);
    drift = std::max(drift, (s.base_pos - start).norm());
  }
  c.expect(drift < 1e-3, fmt::format("settle drift {:.3e} m", drift));

  // Free fall from 1 m, legs clear of the ground.
  RobotState f;
  f.base_pos = Vec3(0.0, 0.0, 1.0);
  f.joint_pos = model.default_joint_pos;
  RobotModel stiff = model;
  stiff.joint_damping.setZero();
  RobotState g = step(f, Vec12::Zero(), *map, stiff, params, dt);
  c.expect(g.base_lin_vel.z() == -kGravity * dt, "one-step free-fall velocity");
  double fall_err = 0.0;
  g = f;
  for (int k = 1; k <= 60; ++k) {
    g = step(g, Vec12::Zero(), *map, stiff, params, dt);
    const double t = k * dt;
    fall_err = std::max({fall_err, std::abs(g.base_pos.z() - (1.0 - 0.5 * kGravity * t * t)),
                         std::abs(g.base_lin_vel.z() + kGravity * t)});
  }
  c.expect(fall_err < 1e-12, fmt::format("free-fall trajectory error {:.2e}", fall_err));

  // Friction cone: 50 N demanded, mu N = 20 N available.
  const Eigen::Vector2d slip(0.6, 0.8);
  const Eigen::Vector2d ft = friction_force(slip, 40.0, 0.5, 50.0);
  c.expect(std::abs(ft.norm() - 20.0) < 1e-12 && std::abs(ft.normalized().dot(-slip.normalized()) - 1.0) < 1e-12,
           fmt::format("friction clamp |F_t| = {:.6f}", ft.norm()));
  const Eigen::Vector2d ft_small = friction_force(slip, 40.0, 0.5, 10.0);
  c.expect(std::abs(ft_small.norm() - 10.0) < 1e-12, "viscous branch below the cone");

  // Determinism: identical torque sequences give bit-identical states.
  auto replay = [&]() {
    Rng rng(5);
    RobotState r = rest_state(model, params, 0.0);
    for (int k = 0; k < 400; ++k) {
      Vec12 tau;
      for (int j = 0; j < kNumJoints; ++j) tau[j] = rng.normal(0.0, 3.0);
      r = step(r, tau, *map, model, params, dt);
    }
    return r;
  };
  const RobotState a = replay();
  const RobotState b = replay();
  const bool same = std::memcmp(a.base_pos.data(), b.base_pos.data(), sizeof(double) * 3) == 0 &&
                    std::memcmp(a.base_quat.coeffs().data(), b.base_quat.coeffs().data(), sizeof(double) * 4) == 0 &&
                    std::memcmp(a.joint_pos.data(), b.joint_pos.data(), sizeof(double) * 12) == 0 &&
                    std::memcmp(a.joint_vel.data(), b.joint_vel.data(), sizeof(double) * 12) == 0 &&
                    std::memcmp(a.base_lin_vel.data(), b.base_lin_vel.data(), sizeof(double) * 3) == 0 &&
                    std::memcmp(a.base_ang_vel.data(), b.base_ang_vel.data(), sizeof(double) * 3) == 0;
  c.expect(same, "bit-identical replay");

  // Conservative regime: airborne, undamped, no torques. The trunk flies
  // ballistically while the legs swing under gravity. Joint stops are
  // inelastic impacts, so they are moved out of reach like the ground is.
  RobotModel free_model = stiff;
  for (auto& limit : free_model.joint_limits) limit = {-10.0, 10.0};
  RobotState e;
  e.base_pos = Vec3(0.0, 0.0, 1.5);
  e.base_lin_vel = Vec3(0.4, -0.2, 3.0);
  e.joint_pos = model.default_joint_pos;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    e.joint_pos[3 * leg] = 0.2 * (leg % 2 == 0 ? 1.0 : -1.0);
    e.joint_pos[3 * leg + 1] += 0.3;
    e.joint_pos[3 * leg + 2] -= 0.2;
  }
  const double e0 = mechanical_energy(e, free_model, params);
  // Semi-implicit Euler keeps the error bounded and oscillating, so the drift
  // per second is the least-squares slope of the relative error over time.
  const int n_energy = static_cast<int>(0.8 / dt);  // s, touchdown is near 0.9 s
  double st = 0.0, se = 0.0, stt = 0.0, ste = 0.0;
  bool airborne = true;
  double rel = 0.0;
  for (int k = 1; k <= n_energy; ++k) {
    e = step(e, Vec12::Zero(), *map, free_model, params, dt);
    for (bool in_contact : e.foot_contact) airborne = airborne && !in_contact;
    const double t = k * dt;
    rel = (mechanical_energy(e, free_model, params) - e0) / std::abs(e0);
    st += t;
    se += rel;
    stt += t * t;
    ste += t * rel;
  }
  const double slope = std::abs((n_energy * ste - st * se) / (n_energy * stt - st * st));
  const double end_rate = std::abs(rel) / (n_energy * dt);
  const double worst_rate = std::max(slope, end_rate);
  c.expect(airborne, "energy run stays airborne");
  c.expect(worst_rate < 1e-3, fmt::format("energy drift {:.3e} per s", worst_rate));

  const double elapsed = seconds_since(t0);
  c.expect(elapsed < 30.0, fmt::format("runtime {:.1f} s", elapsed));
  return c.outcome(fmt::format("settle drift {:.2e} m, energy drift {:.2e}/s, {:.2f} s", drift, worst_rate, elapsed));
}

// ---------------------------------------------------------------------------

struct SeedResult {
  bool pass = false;
  int updates = 0;
  double r_v = 0.0;
  double length_fraction = 0.0;
  double seconds = 0.0;
};

// Trains until a 100-update window meets both targets or the budget is spent.
SeedResult learn_one_seed(config::TrainConfig cfg, std::uint64_t seed) {
  const auto t0 = Clock::now();
  cfg.seed = seed;
  train::Trainer trainer(cfg, train::Phase::kStage1);
  const int window = 100;
  const double max_len = cfg.env.max_episode_steps;
  double r_v_sum = 0.0;
  double len_sum = 0.0;
  double episodes = 0.0;
  SeedResult out;
  while (!trainer.finished()) {
    const nlohmann::json rec = trainer.update();
    r_v_sum += rec["r_v"].get<double>();
    if (!rec["episode_length"].is_null()) {
      const double n = rec["episodes"].get<double>();
      len_sum += rec["episode_length"].get<double>() * n;
      episodes += n;
    }
    const int done = trainer.update_index();
    if (done % window == 0) {
      out.updates = done;
      out.r_v = r_v_sum / window;
      // No episode ended inside the window: every environment survived it.
      out.length_fraction = episodes > 0.0 ? len_sum / episodes / max_len : 1.0;
      out.pass = out.r_v >= 0.7 && out.length_fraction >= 0.8;
      r_v_sum = len_sum = episodes = 0.0;
      if (out.pass) break;
    }
  }
  out.seconds = seconds_since(t0);
  return out;
}

Outcome learning_benchmark() {
  const config::TrainConfig cfg = fixture::load_config("bench_flat.json");
  Checks c;
  int passed = 0;
  std::ostringstream s;
  for (std::uint64_t seed : {1, 2, 3}) {
    const SeedResult r = learn_one_seed(cfg, seed);
    passed += r.pass ? 1 : 0;
    s << fmt::format("seed {}: {} after {} updates (R_v {:.3f}, length {:.0f}%, {:.0f} s); ", seed,
                     r.pass ? "met" : "missed", r.updates, r.r_v, 100.0 * r.length_fraction, r.seconds);
    if (passed >= 2) break;
  }
  c.expect(passed >= 2, fmt::format("{} of 3 seeds met the targets", passed));
  return c.outcome(s.str());
}

// ---------------------------------------------------------------------------

Outcome amp_smoke() {
  const auto t0 = Clock::now();
  Checks c;
  const auto dataset = fixture::synthetic_dataset(4000, 17);
  const fixture::PairSet random = fixture::rollout_pairs(fixture::Behaviour::kRandom, 4000, 18);
  const fixture::PairSet expert_eval = fixture::rollout_pairs(fixture::Behaviour::kTrot, 1000, 19);
  const fixture::PairSet random_eval = fixture::rollout_pairs(fixture::Behaviour::kRandom, 1000, 20);

  nn::Mlp<float> disc = amp::make_discriminator<float>({256, 128});
  Rng rng(21);
  disc.init(rng);
  nn::AdamConfig ac;
  ac.lr = 1e-4;
  nn::AdamState<float> adam(disc.param_count(), ac);
  const Eigen::MatrixXd expert_norm = dataset->normalize(dataset->features);
  const Eigen::MatrixXd random_norm = dataset->normalize(random.pairs);
  for (int u = 0; u < 200; ++u) {
    const Matrix<float> e = amp::sample_columns(expert_norm, 256, rng).cast<float>();
    const Matrix<float> p = amp::sample_columns(random_norm, 256, rng).cast<float>();
    amp::amp_update<float>(disc, adam, e, p, 10.0);
  }

  auto mean_d = [&](const Eigen::MatrixXd& raw) {
    return static_cast<double>(disc.forward(dataset->normalize(raw).cast<float>()).mean());
  };
  const double d_expert = mean_d(expert_eval.pairs);
  const double d_random = mean_d(random_eval.pairs);
  const double style_expert = amp::style_rewards_for_batch<float>(disc, *dataset, expert_eval.pairs).mean();
  const double style_random = amp::style_rewards_for_batch<float>(disc, *dataset, random_eval.pairs).mean();
  c.expect(d_expert - d_random > 1.0, fmt::format("D gap {:.3f}", d_expert - d_random));
  c.expect(style_expert - style_random >= 0.3, fmt::format("style gap {:.3f}", style_expert - style_random));
  return c.outcome(fmt::format("held-out D(expert) {:.3f}, D(random) {:.3f}, style {:.3f} vs {:.3f}, {:.1f} s",
                               d_expert, d_random, style_expert, style_random, seconds_since(t0)));
}

// ---------------------------------------------------------------------------

bool resume_matches(const config::TrainConfig& cfg, train::Phase phase,
                    std::shared_ptr<const amp::ExpertDataset> dataset, int k, int further, std::string& why) {
  train::Trainer straight(cfg, phase, dataset);
  std::vector<std::string> reference;
  for (int i = 0; i < k + further; ++i) {
    const std::string rec = straight.update().dump();
    if (i >= k) reference.push_back(rec);
  }

  train::Trainer first(cfg, phase, dataset);
  for (int i = 0; i < k; ++i) first.update();
  const std::string bytes = first.checkpoint().serialize();
  train::Trainer resumed(cfg, phase, dataset);
  resumed.restore(io::TensorArchive::deserialize(bytes));
  for (int i = 0; i < further; ++i) {
    const std::string rec = resumed.update().dump();
    if (rec != reference[static_cast<std::size_t>(i)]) {
      why = fmt::format("{} metrics differ at update {}", train::to_string(phase), k + i + 1);
      return false;
    }
  }
  if (resumed.checkpoint().serialize() != straight.checkpoint().serialize()) {
    why = fmt::format("{} final checkpoints differ", train::to_string(phase));
    return false;
  }
  return true;
}

Outcome checkpoint_determinism() {
  const auto t0 = Clock::now();
  Checks c;
  config::TrainConfig cfg = fixture::load_config("smoke.json");
  cfg.checkpoint_interval = 1000;  // the trainer is driven directly, no files are written
  std::string why;
  c.expect(resume_matches(cfg, train::Phase::kStage1, nullptr, 3, 10, why), why.empty() ? "stage1" : why);
  why.clear();
  const auto dataset = fixture::synthetic_dataset(600, 5);
  c.expect(resume_matches(cfg, train::Phase::kStage2, dataset, 3, 10, why), why.empty() ? "stage2" : why);
  return c.outcome(fmt::format("resume at update 3, 10 further updates compared in both phases, {:.1f} s",
                               seconds_since(t0)));
}

}  // namespace

std::vector<Criterion> all_criteria() {
  return {
      {"formula_oracles", "Euler, PD and reward formulas against independent oracles", formula_oracles},
      {"gradient_suite", "analytic gradients against central differences", gradient_suite},
      {"clipping_property", "clipped PPO samples carry exactly zero gradient", clipping_property},
      {"curriculum_suite", "terrain, reward and command curricula", curriculum_suite},
      {"randomization", "domain randomization bounds and uniformity", randomization},
      {"dynamics_sanity", "settle, free fall, friction, determinism, energy", dynamics_sanity},
      {"learning_benchmark", "flat-terrain velocity tracking within 1500 updates", learning_benchmark},
      {"amp_smoke", "discriminator separates expert from random transitions", amp_smoke},
      {"checkpoint_determinism", "resume equals an uninterrupted run bit for bit", checkpoint_determinism},
  };
}

}  // namespace palo::acceptance
