#include "palo/trainer.hpp"

#include <spdlog/spdlog.h>

#include "palo/errors.hpp"

namespace palo::train {

using nlohmann::json;

namespace {

json grid_json(const curricula::CommandGrid& g) {
  return {{"vx", {g.vx.lo, g.vx.hi}}, {"vy", {g.vy.lo, g.vy.hi}}, {"wz", {g.wz.lo, g.wz.hi}}};
}

void grid_from(const json& j, curricula::CommandGrid& g) {
  g.vx = {j.at("vx").at(0).get<double>(), j.at("vx").at(1).get<double>()};
  g.vy = {j.at("vy").at(0).get<double>(), j.at("vy").at(1).get<double>()};
  g.wz = {j.at("wz").at(0).get<double>(), j.at("wz").at(1).get<double>()};
}

}  // namespace

std::string to_string(Phase p) { return p == Phase::kStage1 ? "stage1" : "stage2"; }

Phase phase_from_string(const std::string& s) {
  if (s == "stage1") return Phase::kStage1;
  if (s == "stage2") return Phase::kStage2;
  throw FormatError("unknown training phase '" + s + "'");
}

PhasePlan plan(const config::TrainConfig& cfg, Phase phase) {
  switch (cfg.stage) {
    case config::Stage::kStage1: return {0, cfg.total_updates};
    case config::Stage::kStage2: return {0, cfg.total_updates};
    case config::Stage::kBoth:
      return phase == Phase::kStage1 ? PhasePlan{0, cfg.stage1_updates}
                                     : PhasePlan{cfg.stage1_updates, cfg.total_updates - cfg.stage1_updates};
  }
  return {0, cfg.total_updates};
}

rollout::VecEnvConfig vec_env_config(const config::TrainConfig& cfg, Phase phase) {
  rollout::VecEnvConfig v;
  v.num_envs = cfg.num_envs;
  v.history = cfg.network.history;
  v.env = cfg.env;
  v.env.push.interval_min = cfg.curriculum.push_interval_relaxed;
  v.env.push.interval_max = std::max(cfg.env.push.interval_max, cfg.curriculum.push_interval_relaxed);
  v.env.reward.feet_air_time = phase == Phase::kStage1 ? cfg.stage1_feet_air_time : 0.0;
  v.kinds = phase == Phase::kStage1 ? cfg.terrain.stage1_kinds : cfg.terrain.stage2_kinds;
  v.terrain_curriculum = cfg.curriculum.terrain;
  v.seed = cfg.seed + (phase == Phase::kStage1 ? 0 : 7919);
  return v;
}

std::shared_ptr<const terrain::TerrainBank> make_bank(const config::TrainConfig& cfg, Phase phase) {
  const auto kinds = phase == Phase::kStage1 ? cfg.terrain.stage1_kinds : cfg.terrain.stage2_kinds;
  return std::make_shared<const terrain::TerrainBank>(cfg.terrain.spec, cfg.seed, kinds, cfg.terrain.variants);
}

Trainer::Trainer(config::TrainConfig cfg, Phase phase, std::shared_ptr<const amp::ExpertDataset> dataset)
    : cfg_(std::move(cfg)),
      phase_(phase),
      plan_(plan(cfg_, phase)),
      digest_(config::digest(cfg_)),
      dataset_(std::move(dataset)),
      net_(cfg_.network),
      disc_(amp::make_discriminator<float>(cfg_.amp.discriminator.hidden)),
      grid_(cfg_.curriculum.command_grid),
      tracker_(cfg_.curriculum.command_grid),
      rng_(cfg_.seed, phase == Phase::kStage1 ? 1 : 2) {
  cfg_.validate();
  use_amp_ = phase == Phase::kStage2 && cfg_.amp.enabled;
  if (use_amp_ && !dataset_) {
    throw ConfigError("stage-2 training with AMP needs an expert dataset; run `palo collect-amp` on a stage-1 "
                      "checkpoint and set amp.dataset");
  }
  Rng init_rng(cfg_.seed, 3);
  net_.init(init_rng);
  disc_.init(init_rng, std::sqrt(2.0), 1.0);
  nn::AdamConfig ac;
  ac.lr = cfg_.ppo.learning_rate;
  adam_ = nn::AdamState<float>(net_.param_count(), ac);
  nn::AdamConfig dc;
  dc.lr = cfg_.amp.discriminator.learning_rate;
  disc_adam_ = nn::AdamState<float>(disc_.param_count(), dc);
  if (use_amp_) expert_normalized_ = dataset_->normalize(dataset_->features).cast<float>();

  envs_ = std::make_unique<rollout::VecEnv>(dynamics::RobotModel::a1_like(), vec_env_config(cfg_, phase),
                                            make_bank(cfg_, phase));
  apply_curricula();
  envs_->reset_all();
}

void Trainer::set_policy(const rl::ActorCritic<float>& net) {
  if (net.param_count() != net_.param_count()) throw CheckpointMismatch("policy shape differs from the config");
  net_.set_flat_params(net.flat_params());
  adam_ = nn::AdamState<float>(net_.param_count(), adam_.config);
}

void Trainer::apply_curricula() {
  const int global = plan_.offset + update_;
  stage_ = cfg_.curriculum.reward
               ? curricula::reward_stage(global, cfg_.total_updates, cfg_.curriculum.reward_t1, cfg_.curriculum.reward_t2)
               : curricula::RewardStage{2, 1.0};
  envs_->set_posture_multiplier(stage_.posture_multiplier);
  envs_->set_grid(grid_);
  envs_->set_push_interval_floor(curricula::push_interval_floor(grid_, cfg_.curriculum.push_interval_relaxed,
                                                                cfg_.curriculum.push_interval_tight));
}

json Trainer::update() {
  apply_curricula();
  const int n = envs_->size();
  const int steps = cfg_.ppo.steps_per_env;
  const Eigen::Index m = static_cast<Eigen::Index>(n) * steps;

  rl::RolloutBatch<float> batch;
  batch.window.resize(cfg_.network.window_dim(), m);
  batch.command.resize(rl::kCommandDim, m);
  batch.critic_in.resize(rl::kCriticInputDim, m);
  batch.actions.resize(env::kActionDim, m);
  batch.log_prob.resize(m);
  Eigen::MatrixXd rewards(steps, n), values(steps, n), dones(steps, n);
  Eigen::MatrixXd amp_pairs(amp::kPairDim, m);

  std::vector<rollout::EpisodeRecord> episodes;
  double task_reward_sum = 0.0;
  double r_v_sum = 0.0;
  for (int t = 0; t < steps; ++t) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(t) * n;
    const nn::Matrix<float> window = envs_->windows<float>();
    const nn::Matrix<float> command = envs_->commands<float>();
    const nn::Matrix<float> critic_in = envs_->critic_inputs<float>();
    const nn::Matrix<float> mu = net_.actor_forward(window, command);
    const nn::Matrix<float> v = net_.critic_forward(critic_in);
    const nn::GaussianSample<float> sample = nn::gaussian_policy<float>(mu, net_.log_std, &rng_, false);
    batch.window.middleCols(c0, n) = window;
    batch.command.middleCols(c0, n) = command;
    batch.critic_in.middleCols(c0, n) = critic_in;
    batch.actions.middleCols(c0, n) = sample.action;
    for (int i = 0; i < n; ++i) {
      batch.log_prob[c0 + i] = static_cast<double>(sample.log_prob[i]);
      values(t, i) = static_cast<double>(v(0, i));
    }

    rollout::StepBatch out = envs_->step(sample.action.cast<double>(), cfg_.parallel);
    bool any_bootstrap = out.bootstrap.sum() > 0.0;
    Eigen::VectorXd terminal_values = Eigen::VectorXd::Zero(n);
    if (any_bootstrap) {
      const nn::Matrix<float> tv = net_.critic_forward(out.terminal_critic.cast<float>());
      for (int i = 0; i < n; ++i) terminal_values[i] = static_cast<double>(tv(0, i));
    }
    for (int i = 0; i < n; ++i) {
      rewards(t, i) = out.reward[i] + cfg_.ppo.gamma * out.bootstrap[i] * terminal_values[i];
      dones(t, i) = out.done[i];
      tracker_.add(out.command[static_cast<std::size_t>(i)], out.r_v[i]);
    }
    amp_pairs.middleCols(c0, n) = out.amp_pairs;
    task_reward_sum += out.reward.sum();
    r_v_sum += out.r_v.sum();
    episodes.insert(episodes.end(), out.episodes.begin(), out.episodes.end());
  }
  Eigen::VectorXd last_values(n);
  {
    const nn::Matrix<float> lv = net_.critic_forward(envs_->critic_inputs<float>());
    for (int i = 0; i < n; ++i) last_values[i] = static_cast<double>(lv(0, i));
  }

  double style_mean = 0.0;
  if (use_amp_) {
    const Eigen::VectorXd style = amp::style_rewards_for_batch<float>(disc_, *dataset_, amp_pairs);
    const double w = cfg_.env.reward.w_style * cfg_.env.control_dt;
    for (int t = 0; t < steps; ++t) {
      for (int i = 0; i < n; ++i) rewards(t, i) += w * style[static_cast<Eigen::Index>(t) * n + i];
    }
    style_mean = style.mean();
  }

  const rl::GaeResult g = cfg_.parallel ? rl::gae_parallel(rewards, values, dones, last_values, cfg_.ppo.gamma, cfg_.ppo.lambda)
                                        : rl::gae(rewards, values, dones, last_values, cfg_.ppo.gamma, cfg_.ppo.lambda);
  // (T x N) column-major -> sample index t*N + i
  batch.values = Eigen::Map<const Eigen::MatrixXd>(Eigen::MatrixXd(values.transpose()).data(), m, 1);
  batch.advantages = Eigen::Map<const Eigen::MatrixXd>(Eigen::MatrixXd(g.advantages.transpose()).data(), m, 1);
  batch.returns = Eigen::Map<const Eigen::MatrixXd>(Eigen::MatrixXd(g.returns.transpose()).data(), m, 1);
  rl::normalize_advantages(batch.advantages);

  const rl::UpdateMetrics pm = rl::ppo_update<float>(net_, adam_, batch, cfg_.ppo, rng_);

  json record;
  if (use_amp_) {
    const auto& dc = cfg_.amp.discriminator;
    const Eigen::MatrixXd policy_batch = amp::sample_columns(amp_pairs, dc.batch_policy, rng_);
    nn::Matrix<float> expert_batch(amp::kPairDim, dc.batch_expert);
    for (int i = 0; i < dc.batch_expert; ++i) {
      expert_batch.col(i) = expert_normalized_.col(
          static_cast<Eigen::Index>(rng_.below(static_cast<std::uint64_t>(expert_normalized_.cols()))));
    }
    const amp::AmpMetrics am = amp::amp_update<float>(
        disc_, disc_adam_, expert_batch, dataset_->normalize(policy_batch).cast<float>(), dc.gp_weight);
    record["amp"] = {{"loss", am.loss},           {"grad_penalty", am.grad_penalty}, {"expert_acc", am.expert_acc},
                     {"policy_acc", am.policy_acc}, {"d_expert", am.d_expert},       {"d_policy", am.d_policy},
                     {"style_reward", style_mean}};
  }

  const curricula::CommandGrid before = grid_;
  if (cfg_.curriculum.grid && (update_ + 1) % cfg_.curriculum.grid_interval == 0) {
    const double boundary = tracker_.boundary_mean(grid_);
    if (boundary >= 0.0) grid_ = curricula::grid_update(boundary, grid_, cfg_.curriculum.grid_threshold);
    tracker_.clear();
  }

  double ep_len = 0.0, ep_rv = 0.0, timeouts = 0.0, failures = 0.0;
  for (const auto& e : episodes) {
    ep_len += e.length;
    ep_rv += e.mean_r_v;
    timeouts += e.timeout ? 1.0 : 0.0;
    failures += (e.collision || e.fell || e.nonfinite) ? 1.0 : 0.0;
  }
  double level_sum = 0.0;
  for (int i = 0; i < n; ++i) level_sum += envs_->env(i).state().terrain.level;
  const double ne = static_cast<double>(episodes.size());

  record["update"] = global_update();
  record["phase"] = to_string(phase_);
  record["reward"] = task_reward_sum / static_cast<double>(m);
  record["r_v"] = r_v_sum / static_cast<double>(m);
  record["episodes"] = episodes.size();
  record["episode_length"] = ne > 0 ? json(ep_len / ne) : json(nullptr);
  record["episode_r_v"] = ne > 0 ? json(ep_rv / ne) : json(nullptr);
  record["timeouts"] = timeouts;
  record["failures"] = failures;
  record["terrain_level"] = level_sum / n;
  record["reward_stage"] = stage_.stage;
  record["posture_multiplier"] = stage_.posture_multiplier;
  record["grid"] = grid_json(grid_);
  record["grid_expanded"] = !(before == grid_);
  record["ppo"] = {{"policy_loss", pm.policy_loss}, {"value_loss", pm.value_loss},     {"entropy", pm.entropy},
                   {"approx_kl", pm.approx_kl},     {"clip_fraction", pm.clip_fraction}, {"grad_norm", pm.grad_norm},
                   {"action_std", pm.action_std}};
  ++update_;
  return record;
}

io::TensorArchive Trainer::checkpoint() const {
  io::TensorArchive a("checkpoint", digest_);
  json& meta = a.meta();
  meta["config"] = config::to_json(cfg_);
  meta["phase"] = to_string(phase_);
  meta["update"] = update_;
  meta["global_update"] = global_update();
  meta["grid"] = grid_json(grid_);
  meta["rng"] = {rng_.key(), rng_.counter()};
  meta["adam_step"] = adam_.step;
  meta["disc_adam_step"] = disc_adam_.step;
  meta["uses_amp"] = use_amp_;
  if (dataset_) meta["dataset_digest"] = dataset_->metadata.value("policy_digest", std::string{});
  meta["envs"] = envs_->save_state(a, "env/");
  a.put<float>("policy", net_.flat_params());
  a.put<float>("adam/m", adam_.m);
  a.put<float>("adam/v", adam_.v);
  a.put<float>("discriminator", disc_.params());
  a.put<float>("disc_adam/m", disc_adam_.m);
  a.put<float>("disc_adam/v", disc_adam_.v);
  a.put<double>("grid/sums", tracker_.sums());
  a.put<double>("grid/counts", tracker_.counts());
  return a;
}

void Trainer::save(const std::string& path) const { checkpoint().save(path); }

void Trainer::restore(const io::TensorArchive& a) {
  if (a.kind() != "checkpoint") throw CheckpointMismatch("archive is a " + a.kind() + ", not a checkpoint");
  if (a.digest() != digest_) throw CheckpointMismatch("checkpoint was written under a different config");
  try {
    const json& meta = a.meta();
    if (phase_from_string(meta.at("phase").get<std::string>()) != phase_) {
      throw CheckpointMismatch("checkpoint belongs to another training phase");
    }
    const Eigen::VectorXf policy = a.vector<float>("policy");
    if (policy.size() != net_.param_count()) throw CheckpointMismatch("policy parameter count differs");
    net_.set_flat_params(policy);
    adam_.m = a.vector<float>("adam/m");
    adam_.v = a.vector<float>("adam/v");
    adam_.step = meta.at("adam_step").get<long>();
    disc_.params() = a.vector<float>("discriminator");
    disc_adam_.m = a.vector<float>("disc_adam/m");
    disc_adam_.v = a.vector<float>("disc_adam/v");
    disc_adam_.step = meta.at("disc_adam_step").get<long>();
    if (disc_.params().size() != disc_adam_.m.size()) throw CheckpointMismatch("discriminator shape differs");
    update_ = meta.at("update").get<int>();
    grid_from(meta.at("grid"), grid_);
    rng_ = Rng::restore(meta.at("rng").at(0).get<std::uint64_t>(), meta.at("rng").at(1).get<std::uint64_t>());
    tracker_.restore(a.list<double>("grid/sums"), a.list<double>("grid/counts"));
    envs_->load_state(meta.at("envs"), a, "env/");
  } catch (const json::exception& e) {
    throw CheckpointMismatch(std::string("malformed checkpoint metadata: ") + e.what());
  }
  apply_curricula();
}

LoadedPolicy load_policy(const io::TensorArchive& a) {
  if (a.kind() != "checkpoint") throw CheckpointMismatch("archive is a " + a.kind() + ", not a checkpoint");
  LoadedPolicy p;
  p.config = config::from_json(a.meta().at("config"));
  p.digest = a.digest();
  if (config::digest(p.config) != p.digest) throw CheckpointMismatch("checkpoint config does not match its digest");
  p.phase = phase_from_string(a.meta().at("phase").get<std::string>());
  p.update = a.meta().value("global_update", 0);
  p.grid = p.config.curriculum.command_grid;
  if (a.meta().contains("grid")) grid_from(a.meta().at("grid"), p.grid);
  p.net = rl::ActorCritic<float>(p.config.network);
  const Eigen::VectorXf params = a.vector<float>("policy");
  if (params.size() != p.net.param_count()) {
    throw CheckpointMismatch("checkpoint network has " + std::to_string(params.size()) + " parameters, config implies " +
                             std::to_string(p.net.param_count()));
  }
  p.net.set_flat_params(params);
  return p;
}

LoadedPolicy load_policy(const std::string& path) { return load_policy(io::TensorArchive::load(path)); }

amp::ExpertDataset collect_expert(const LoadedPolicy& policy, Eigen::Index pairs, std::uint64_t seed, int num_envs) {
  config::TrainConfig cfg = policy.config;
  cfg.seed = seed;
  if (num_envs > 0) cfg.num_envs = num_envs;
  rollout::VecEnv envs(dynamics::RobotModel::a1_like(), vec_env_config(cfg, Phase::kStage1),
                       make_bank(cfg, Phase::kStage1));
  envs.set_grid(policy.grid);
  envs.set_posture_multiplier(1.0);
  amp::CollectOptions opts;
  opts.pairs = pairs;
  opts.gate = cfg.amp.discriminator.gate;
  opts.policy_digest = policy.digest;
  amp::ExpertDataset d = amp::collect_expert_dataset(policy.net, envs, opts);
  d.metadata["collection_seed"] = seed;
  d.metadata["policy_update"] = policy.update;
  return d;
}

}  // namespace palo::train
