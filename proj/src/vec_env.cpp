#include "palo/vec_env.hpp"

#include "palo/errors.hpp"

namespace palo::rollout {

namespace {

using nlohmann::json;

template <typename V>
json vec_json(const V& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

template <typename V>
void vec_from(const json& a, V& v) {
  if (!a.is_array() || static_cast<Eigen::Index>(a.size()) != v.size()) throw FormatError("state vector has the wrong length");
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = a.at(static_cast<std::size_t>(i)).get<double>();
}

}  // namespace

Eigen::Matrix<double, rl::kCriticInputDim, 1> critic_input(const env::ObservationPair& obs) {
  Eigen::Matrix<double, rl::kCriticInputDim, 1> in;
  in << obs.proprio, obs.privileged, obs.proprio.segment<rl::kCommandDim>(env::channel::kCommand);
  return in;
}

json to_json(const env::EnvState& s) {
  json j;
  const auto& r = s.robot;
  j["base_pos"] = vec_json(r.base_pos);
  j["base_quat"] = {r.base_quat.w(), r.base_quat.x(), r.base_quat.y(), r.base_quat.z()};
  j["base_lin_vel"] = vec_json(r.base_lin_vel);
  j["base_ang_vel"] = vec_json(r.base_ang_vel);
  j["joint_pos"] = vec_json(r.joint_pos);
  j["joint_vel"] = vec_json(r.joint_vel);
  j["foot_contact"] = r.foot_contact;
  json forces = json::array();
  for (const auto& f : r.foot_force) forces.push_back(vec_json(f));
  j["foot_force"] = forces;
  j["time"] = r.time;
  const auto& p = s.params;
  j["params"] = {{"ground_friction", p.ground_friction}, {"restitution", p.restitution},
                 {"load_mass", p.load_mass},             {"link_mass_scale", p.link_mass_scale},
                 {"com_offset", vec_json(p.com_offset)}, {"p_gain_scale", p.p_gain_scale},
                 {"d_gain_scale", p.d_gain_scale},       {"motor_power_scale", p.motor_power_scale},
                 {"action_delay", p.action_delay}};
  j["command"] = vec_json(s.command.as_vector());
  j["prev_joint_pos"] = vec_json(s.prev_joint_pos);
  j["prev_action"] = vec_json(s.prev_action);
  j["prev_target"] = vec_json(s.prev_target);
  j["episode_step"] = s.episode_step;
  j["since_resample"] = s.since_resample;
  json pushes = json::array();
  for (const auto& e : s.pushes) pushes.push_back({{"time", e.time}, {"delta_v", vec_json(e.delta_v)}});
  j["pushes"] = pushes;
  j["next_push"] = s.next_push;
  j["air_time"] = s.air_time;
  j["spawn_xy"] = vec_json(s.spawn_xy);
  j["terrain_kind"] = std::string(terrain::to_string(s.terrain.kind));
  j["terrain_level"] = s.terrain.level;
  j["terrain_variant"] = s.terrain_variant;
  j["rng"] = {s.rng.key(), s.rng.counter()};
  return j;
}

env::EnvState env_state_from_json(const json& j) {
  try {
    env::EnvState s;
    auto& r = s.robot;
    vec_from(j.at("base_pos"), r.base_pos);
    const auto& q = j.at("base_quat");
    r.base_quat = dynamics::Quat(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(),
                                 q.at(3).get<double>());
    vec_from(j.at("base_lin_vel"), r.base_lin_vel);
    vec_from(j.at("base_ang_vel"), r.base_ang_vel);
    vec_from(j.at("joint_pos"), r.joint_pos);
    vec_from(j.at("joint_vel"), r.joint_vel);
    r.foot_contact = j.at("foot_contact").get<std::array<bool, dynamics::kNumLegs>>();
    for (int leg = 0; leg < dynamics::kNumLegs; ++leg) vec_from(j.at("foot_force").at(leg), r.foot_force[leg]);
    r.time = j.at("time").get<double>();
    const auto& p = j.at("params");
    s.params.ground_friction = p.at("ground_friction").get<double>();
    s.params.restitution = p.at("restitution").get<double>();
    s.params.load_mass = p.at("load_mass").get<double>();
    s.params.link_mass_scale = p.at("link_mass_scale").get<double>();
    vec_from(p.at("com_offset"), s.params.com_offset);
    s.params.p_gain_scale = p.at("p_gain_scale").get<double>();
    s.params.d_gain_scale = p.at("d_gain_scale").get<double>();
    s.params.motor_power_scale = p.at("motor_power_scale").get<double>();
    s.params.action_delay = p.at("action_delay").get<double>();
    Eigen::Matrix<double, 6, 1> cmd;
    vec_from(j.at("command"), cmd);
    s.command = Command6D::from_vector(cmd);
    vec_from(j.at("prev_joint_pos"), s.prev_joint_pos);
    vec_from(j.at("prev_action"), s.prev_action);
    vec_from(j.at("prev_target"), s.prev_target);
    s.episode_step = j.at("episode_step").get<int>();
    s.since_resample = j.at("since_resample").get<double>();
    for (const auto& e : j.at("pushes")) {
      randomization::PushEvent ev;
      ev.time = e.at("time").get<double>();
      vec_from(e.at("delta_v"), ev.delta_v);
      s.pushes.push_back(ev);
    }
    s.next_push = j.at("next_push").get<std::size_t>();
    s.air_time = j.at("air_time").get<std::array<double, dynamics::kNumLegs>>();
    vec_from(j.at("spawn_xy"), s.spawn_xy);
    s.terrain.kind = terrain::kind_from_string(j.at("terrain_kind").get<std::string>());
    s.terrain.level = j.at("terrain_level").get<int>();
    s.terrain_variant = j.at("terrain_variant").get<int>();
    s.rng = Rng::restore(j.at("rng").at(0).get<std::uint64_t>(), j.at("rng").at(1).get<std::uint64_t>());
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed environment state: ") + e.what());
  }
}

VecEnv::VecEnv(dynamics::RobotModel model, VecEnvConfig config, std::shared_ptr<const terrain::TerrainBank> bank)
    : model_(std::move(model)), config_(std::move(config)), bank_(std::move(bank)) {
  if (config_.num_envs < 1) throw ConfigError("num_envs must be positive");
  if (config_.history < 1) throw ConfigError("history must be positive");
  if (config_.kinds.empty()) throw ConfigError("at least one terrain kind is required");
  for (auto k : config_.kinds) {
    if (!bank_->has(k)) throw ConfigError("terrain bank lacks kind '" + std::string(terrain::to_string(k)) + "'");
  }
  slots_.reserve(static_cast<std::size_t>(config_.num_envs));
  for (int i = 0; i < config_.num_envs; ++i) {
    slots_.push_back(Slot{env::Env(model_, config_.env, Rng(config_.seed, 1000 + static_cast<std::uint64_t>(i)))});
  }
}

void VecEnv::reset_slot(Slot& slot, curricula::TerrainAssignment assignment) {
  const int variants = bank_->variants();
  const int variant = variants > 1 ? static_cast<int>(slot.env.mutable_state().rng.below(variants)) : 0;
  slot.env.reset(bank_->get(assignment.kind, assignment.level, variant), assignment, variant);
  slot.obs = slot.env.observation();
  slot.amp = slot.env.amp_features();
  slot.history.resize(rl::kStepWidth, config_.history);
  for (int c = 0; c < config_.history; ++c) {
    slot.history.col(c).head<env::kProprioDim>() = slot.obs.proprio;
    slot.history.col(c).tail<env::kActionDim>().setZero();
  }
  slot.ep_return = 0.0;
  slot.ep_r_v = 0.0;
}

void VecEnv::reset_all() {
  for (int i = 0; i < size(); ++i) {
    const auto kind = config_.kinds[static_cast<std::size_t>(i) % config_.kinds.size()];
    reset_slot(slots_[static_cast<std::size_t>(i)], {kind, 0});
  }
}

void VecEnv::push_history(Slot& slot, const env::ActionVec& action) {
  const int h = config_.history;
  if (h > 1) slot.history.leftCols(h - 1) = slot.history.rightCols(h - 1).eval();
  slot.history.col(h - 1).head<env::kProprioDim>() = slot.obs.proprio;
  slot.history.col(h - 1).tail<env::kActionDim>() = action;
}

void VecEnv::step_slot(int i, const env::ActionVec& action, StepBatch& out, std::vector<EpisodeRecord>& finished) {
  Slot& slot = slots_[static_cast<std::size_t>(i)];
  const env::AmpStateVec before = slot.amp;
  const env::StepResult res = slot.env.step(action);
  out.reward[i] = res.reward;
  out.r_v[i] = res.info.task.r_v;
  out.command[static_cast<std::size_t>(i)] = res.info.command;
  out.amp_pairs.col(i) << before, res.amp_next;
  slot.ep_return += res.reward;
  slot.ep_r_v += res.info.task.r_v;

  if (!res.done) {
    slot.obs = res.obs;
    slot.amp = res.amp_next;
    push_history(slot, slot.env.state().prev_action);
    return;
  }
  const bool failed = res.info.collision || res.info.fell || res.info.nonfinite;
  out.done[i] = 1.0;
  if (!failed) {
    out.bootstrap[i] = 1.0;
    out.terminal_critic.col(i) = critic_input(res.obs);
  }
  EpisodeRecord rec;
  rec.env = i;
  rec.length = res.info.episode_length;
  rec.ret = slot.ep_return;
  rec.mean_r_v = slot.ep_r_v / std::max(rec.length, 1);
  rec.distance = res.info.distance;
  rec.timeout = res.info.timeout;
  rec.collision = res.info.collision;
  rec.fell = res.info.fell;
  rec.out_of_bounds = res.info.out_of_bounds;
  rec.nonfinite = res.info.nonfinite;
  rec.terrain = slot.env.state().terrain;
  finished.push_back(rec);

  curricula::TerrainAssignment next = rec.terrain;
  if (config_.terrain_curriculum) {
    next = curricula::terrain_update(rec.terrain, rec.distance, bank_->spec().tile_size,
                                     slot.env.mutable_state().rng, config_.kinds);
  }
  reset_slot(slot, next);
}

StepBatch VecEnv::step(const Eigen::MatrixXd& actions, bool parallel) {
  const int n = size();
  if (actions.rows() != env::kActionDim || actions.cols() != n) {
    throw ShapeMismatch("actions must be 12 x num_envs");
  }
  StepBatch out;
  out.reward = Eigen::VectorXd::Zero(n);
  out.done = Eigen::VectorXd::Zero(n);
  out.bootstrap = Eigen::VectorXd::Zero(n);
  out.r_v = Eigen::VectorXd::Zero(n);
  out.command.resize(static_cast<std::size_t>(n));
  out.amp_pairs = Eigen::MatrixXd::Zero(2 * env::kAmpStateDim, n);
  out.terminal_critic = Eigen::MatrixXd::Zero(rl::kCriticInputDim, n);
  std::vector<std::vector<EpisodeRecord>> finished(static_cast<std::size_t>(n));

  if (parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (int i = 0; i < n; ++i) {
      const env::ActionVec a = actions.col(i);
      step_slot(i, a, out, finished[static_cast<std::size_t>(i)]);
    }
  } else {
    for (int i = 0; i < n; ++i) {
      const env::ActionVec a = actions.col(i);
      step_slot(i, a, out, finished[static_cast<std::size_t>(i)]);
    }
  }
  for (auto& f : finished) out.episodes.insert(out.episodes.end(), f.begin(), f.end());
  return out;
}

template <typename S>
nn::Matrix<S> VecEnv::windows() const {
  nn::Matrix<S> out(rl::kStepWidth * config_.history, size());
  for (int i = 0; i < size(); ++i) {
    const auto& h = slots_[static_cast<std::size_t>(i)].history;
    out.col(i) = Eigen::Map<const Eigen::VectorXd>(h.data(), h.size()).template cast<S>();
  }
  return out;
}

template <typename S>
nn::Matrix<S> VecEnv::commands() const {
  nn::Matrix<S> out(rl::kCommandDim, size());
  for (int i = 0; i < size(); ++i) {
    out.col(i) = slots_[static_cast<std::size_t>(i)]
                     .obs.proprio.segment<rl::kCommandDim>(env::channel::kCommand)
                     .template cast<S>();
  }
  return out;
}

template <typename S>
nn::Matrix<S> VecEnv::critic_inputs() const {
  nn::Matrix<S> out(rl::kCriticInputDim, size());
  for (int i = 0; i < size(); ++i) out.col(i) = critic_input(slots_[static_cast<std::size_t>(i)].obs).template cast<S>();
  return out;
}

void VecEnv::set_grid(const curricula::CommandGrid& grid) {
  for (auto& s : slots_) s.env.set_grid(grid);
}

void VecEnv::set_posture_multiplier(double m) {
  for (auto& s : slots_) s.env.set_posture_multiplier(m);
}

void VecEnv::set_push_interval_floor(double seconds) {
  for (auto& s : slots_) {
    randomization::PushConfig push = s.env.config().push;
    push.interval_min = std::min(seconds, push.interval_max);
    s.env.set_push_config(push);
  }
}

json VecEnv::save_state(io::TensorArchive& archive, const std::string& prefix) const {
  json envs = json::array();
  Eigen::MatrixXd proprio(env::kProprioDim, size());
  Eigen::MatrixXd privileged(env::kPrivilegedDim, size());
  Eigen::MatrixXd amp(env::kAmpStateDim, size());
  Eigen::MatrixXd history(rl::kStepWidth * config_.history, size());
  for (int i = 0; i < size(); ++i) {
    const Slot& s = slots_[static_cast<std::size_t>(i)];
    envs.push_back({{"state", to_json(s.env.state())}, {"ep_return", s.ep_return}, {"ep_r_v", s.ep_r_v}});
    proprio.col(i) = s.obs.proprio;
    privileged.col(i) = s.obs.privileged;
    amp.col(i) = s.amp;
    history.col(i) = Eigen::Map<const Eigen::VectorXd>(s.history.data(), s.history.size());
  }
  archive.put<double>(prefix + "proprio", proprio);
  archive.put<double>(prefix + "privileged", privileged);
  archive.put<double>(prefix + "amp", amp);
  archive.put<double>(prefix + "history", history);
  return envs;
}

void VecEnv::load_state(const json& meta, const io::TensorArchive& archive, const std::string& prefix) {
  if (!meta.is_array() || static_cast<int>(meta.size()) != size()) {
    throw CheckpointMismatch("checkpoint holds " + std::to_string(meta.size()) + " environments, config has " +
                             std::to_string(size()));
  }
  const Eigen::MatrixXd proprio = archive.matrix<double>(prefix + "proprio");
  const Eigen::MatrixXd privileged = archive.matrix<double>(prefix + "privileged");
  const Eigen::MatrixXd amp = archive.matrix<double>(prefix + "amp");
  const Eigen::MatrixXd history = archive.matrix<double>(prefix + "history");
  if (history.rows() != rl::kStepWidth * config_.history || history.cols() != size() || proprio.cols() != size()) {
    throw CheckpointMismatch("checkpoint history window does not match the config");
  }
  for (int i = 0; i < size(); ++i) {
    Slot& s = slots_[static_cast<std::size_t>(i)];
    const json& e = meta.at(static_cast<std::size_t>(i));
    env::EnvState st = env_state_from_json(e.at("state"));
    auto tile = bank_->get(st.terrain.kind, st.terrain.level, st.terrain_variant);
    s.env.restore(std::move(st), std::move(tile));
    s.ep_return = e.at("ep_return").get<double>();
    s.ep_r_v = e.at("ep_r_v").get<double>();
    s.obs.proprio = proprio.col(i);
    s.obs.privileged = privileged.col(i);
    s.amp = amp.col(i);
    s.history = Eigen::Map<const Eigen::MatrixXd>(history.col(i).data(), rl::kStepWidth, config_.history);
  }
}

template nn::Matrix<float> VecEnv::windows<float>() const;
template nn::Matrix<double> VecEnv::windows<double>() const;
template nn::Matrix<float> VecEnv::commands<float>() const;
template nn::Matrix<double> VecEnv::commands<double>() const;
template nn::Matrix<float> VecEnv::critic_inputs<float>() const;
template nn::Matrix<double> VecEnv::critic_inputs<double>() const;

}  // namespace palo::rollout
