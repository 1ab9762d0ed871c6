#include "palo/config.hpp"

#include <fstream>
#include <sstream>

#include "palo/archive.hpp"
#include "palo/errors.hpp"

namespace palo::config {

namespace {

using nlohmann::json;

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }

Range range_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 2 || !(v[0] <= v[1])) throw ConfigError("a range must be [lo, hi] with lo <= hi");
  return {v[0], v[1]};
}

json kinds_json(const std::vector<terrain::Kind>& kinds) {
  json a = json::array();
  for (auto k : kinds) a.push_back(std::string(terrain::to_string(k)));
  return a;
}

std::vector<terrain::Kind> kinds_from(const json& j) {
  std::vector<terrain::Kind> out;
  for (const auto& s : j.get<std::vector<std::string>>()) out.push_back(terrain::kind_from_string(s));
  return out;
}

Stage stage_from(const std::string& s) {
  if (s == "stage1") return Stage::kStage1;
  if (s == "stage2") return Stage::kStage2;
  if (s == "both") return Stage::kBoth;
  throw ConfigError("stage must be one of stage1, stage2, both; got '" + s + "'");
}

bool same_kind(const json& def, const json& user) {
  if (def.is_number_integer() || def.is_number_unsigned()) return user.is_number_integer() || user.is_number_unsigned();
  if (def.is_number()) return user.is_number();
  if (def.is_boolean()) return user.is_boolean();
  if (def.is_string()) return user.is_string();
  if (def.is_array()) return user.is_array();
  if (def.is_object()) return user.is_object();
  return false;
}

void merge_strict(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError("'" + (path.empty() ? std::string("config") : path) + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + here + "'");
    json& slot = base[key];
    if (!same_kind(slot, value)) throw ConfigError("config key '" + here + "' has the wrong type");
    if (slot.is_object()) {
      merge_strict(slot, value, here);
    } else {
      slot = value;
    }
  }
}

}  // namespace

std::string to_string(Stage s) {
  switch (s) {
    case Stage::kStage1: return "stage1";
    case Stage::kStage2: return "stage2";
    case Stage::kBoth: return "both";
  }
  return "both";
}

json to_json(const TrainConfig& c) {
  const env::EnvConfig& e = c.env;
  const env::RewardWeights& w = e.reward;
  const randomization::Ranges& r = e.ranges;
  const CurriculumConfig& cu = c.curriculum;
  json j;
  j["schema_version"] = c.schema_version;
  j["seed"] = c.seed;
  j["num_envs"] = c.num_envs;
  j["stage"] = to_string(c.stage);
  j["total_updates"] = c.total_updates;
  j["stage1_updates"] = c.stage1_updates;
  j["checkpoint_interval"] = c.checkpoint_interval;
  j["threads"] = c.threads;
  j["parallel"] = c.parallel;
  j["env"] = {
      {"control_dt", e.control_dt},
      {"substeps", e.substeps},
      {"action_scale", e.action_scale},
      {"action_clip", e.action_clip},
      {"kp", e.gains.kp},
      {"kd", e.gains.kd},
      {"max_episode_steps", e.max_episode_steps},
      {"resample_interval", e.resample_interval},
      {"observation_noise", e.observation_noise},
      {"noise",
       {{"joint_pos", e.noise.joint_pos},
        {"joint_vel", e.noise.joint_vel},
        {"yaw_rate", e.noise.yaw_rate},
        {"angle", e.noise.angle},
        {"gravity", e.noise.gravity}}},
      {"randomize", e.randomize},
      {"pushes", e.pushes},
      {"push", {{"interval_max", e.push.interval_max}, {"max_speed", e.push.max_speed}}},
      {"max_tilt", e.max_tilt},
      {"min_height", e.min_height},
      {"spawn_drop", e.spawn_drop},
      {"posture_commands", e.command.posture},
      {"sampling", e.command.mode == curricula::SamplingMode::kUniform ? "uniform" : "normal"},
  };
  j["reward"] = {{"w_v", w.w_v},
                 {"w_w", w.w_w},
                 {"w_h", w.w_h},
                 {"w_theta", w.w_theta},
                 {"sigma_v", w.sigma_v},
                 {"sigma_w", w.sigma_w},
                 {"sigma_h", w.sigma_h},
                 {"sigma_theta", w.sigma_theta},
                 {"w_style", w.w_style},
                 {"action_rate", w.action_rate},
                 {"torque", w.torque},
                 {"vertical_vel", w.vertical_vel},
                 {"collision", w.collision},
                 {"stage1_feet_air_time", c.stage1_feet_air_time}};
  j["randomization"] = {{"ground_friction", range_json(r.ground_friction)},
                        {"restitution", range_json(r.restitution)},
                        {"load_mass", range_json(r.load_mass)},
                        {"link_mass_scale", range_json(r.link_mass_scale)},
                        {"com_offset", range_json(r.com_offset)},
                        {"p_gain_scale", range_json(r.p_gain_scale)},
                        {"d_gain_scale", range_json(r.d_gain_scale)},
                        {"motor_power_scale", range_json(r.motor_power_scale)},
                        {"action_delay", range_json(r.action_delay)}};
  j["terrain"] = {{"cell_size", c.terrain.spec.cell_size},
                  {"tile_size", c.terrain.spec.tile_size},
                  {"variants", c.terrain.variants},
                  {"stage1_kinds", kinds_json(c.terrain.stage1_kinds)},
                  {"stage2_kinds", kinds_json(c.terrain.stage2_kinds)}};
  j["curriculum"] = {{"terrain", cu.terrain},
                     {"reward", cu.reward},
                     {"reward_t1", cu.reward_t1},
                     {"reward_t2", cu.reward_t2},
                     {"grid", cu.grid},
                     {"grid_threshold", cu.grid_threshold},
                     {"grid_interval", cu.grid_interval},
                     {"grid_initial",
                      {{"vx", range_json(cu.command_grid.vx)},
                       {"vy", range_json(cu.command_grid.vy)},
                       {"wz", range_json(cu.command_grid.wz)}}},
                     {"grid_cap",
                      {{"vx", range_json(cu.command_grid.cap_vx)},
                       {"vy", range_json(cu.command_grid.cap_vy)},
                       {"wz", range_json(cu.command_grid.cap_wz)}}},
                     {"push_interval_relaxed", cu.push_interval_relaxed},
                     {"push_interval_tight", cu.push_interval_tight}};
  j["ppo"] = {{"gamma", c.ppo.gamma},
              {"lambda", c.ppo.lambda},
              {"clip", c.ppo.clip},
              {"epochs", c.ppo.epochs},
              {"minibatches", c.ppo.minibatches},
              {"learning_rate", c.ppo.learning_rate},
              {"value_coef", c.ppo.value_coef},
              {"entropy_coef", c.ppo.entropy_coef},
              {"max_grad_norm", c.ppo.max_grad_norm},
              {"steps_per_env", c.ppo.steps_per_env}};
  j["network"] = {{"history", c.network.history},
                  {"encoder_hidden", c.network.encoder_hidden},
                  {"latent", c.network.latent},
                  {"actor_hidden", c.network.actor_hidden},
                  {"critic_hidden", c.network.critic_hidden},
                  {"init_log_std", c.network.init_log_std}};
  j["amp"] = {{"enabled", c.amp.enabled},
              {"hidden", c.amp.discriminator.hidden},
              {"learning_rate", c.amp.discriminator.learning_rate},
              {"gp_weight", c.amp.discriminator.gp_weight},
              {"batch_expert", c.amp.discriminator.batch_expert},
              {"batch_policy", c.amp.discriminator.batch_policy},
              {"gate", c.amp.discriminator.gate},
              {"pairs", c.amp.pairs},
              {"dataset", c.amp.dataset},
              {"fresh_policy", c.amp.fresh_policy}};
  j["eval"] = {{"repetitions", c.eval.repetitions},
               {"duration", c.eval.duration},
               {"resample_interval", c.eval.resample_interval},
               {"vx", range_json(c.eval.vx)},
               {"vy", range_json(c.eval.vy)},
               {"wz", range_json(c.eval.wz)},
               {"posture", c.eval.posture},
               {"tile_size", c.eval.tile_size},
               {"terrain_level", c.eval.terrain_level}};
  return j;
}

TrainConfig from_json(const json& user) {
  json j = to_json(TrainConfig{});
  merge_strict(j, user, "");
  TrainConfig c;
  try {
    c.schema_version = j.at("schema_version").get<int>();
    if (c.schema_version != kSchemaVersion) {
      throw ConfigError("unsupported schema_version " + std::to_string(c.schema_version));
    }
    c.seed = j.at("seed").get<std::uint64_t>();
    c.num_envs = j.at("num_envs").get<int>();
    c.stage = stage_from(j.at("stage").get<std::string>());
    c.total_updates = j.at("total_updates").get<int>();
    c.stage1_updates = j.at("stage1_updates").get<int>();
    c.checkpoint_interval = j.at("checkpoint_interval").get<int>();
    c.threads = j.at("threads").get<int>();
    c.parallel = j.at("parallel").get<bool>();

    const json& e = j.at("env");
    env::EnvConfig& ec = c.env;
    ec.control_dt = e.at("control_dt").get<double>();
    ec.substeps = e.at("substeps").get<int>();
    ec.action_scale = e.at("action_scale").get<double>();
    ec.action_clip = e.at("action_clip").get<double>();
    ec.gains.kp = e.at("kp").get<double>();
    ec.gains.kd = e.at("kd").get<double>();
    ec.max_episode_steps = e.at("max_episode_steps").get<int>();
    ec.resample_interval = e.at("resample_interval").get<double>();
    ec.observation_noise = e.at("observation_noise").get<bool>();
    const json& nz = e.at("noise");
    ec.noise.joint_pos = nz.at("joint_pos").get<double>();
    ec.noise.joint_vel = nz.at("joint_vel").get<double>();
    ec.noise.yaw_rate = nz.at("yaw_rate").get<double>();
    ec.noise.angle = nz.at("angle").get<double>();
    ec.noise.gravity = nz.at("gravity").get<double>();
    ec.randomize = e.at("randomize").get<bool>();
    ec.pushes = e.at("pushes").get<bool>();
    ec.push.interval_max = e.at("push").at("interval_max").get<double>();
    ec.push.interval_min = ec.push.interval_max;
    ec.push.max_speed = e.at("push").at("max_speed").get<double>();
    ec.max_tilt = e.at("max_tilt").get<double>();
    ec.min_height = e.at("min_height").get<double>();
    ec.spawn_drop = e.at("spawn_drop").get<double>();
    ec.command.posture = e.at("posture_commands").get<bool>();
    const std::string sampling = e.at("sampling").get<std::string>();
    if (sampling == "normal") {
      ec.command.mode = curricula::SamplingMode::kNormal;
    } else if (sampling == "uniform") {
      ec.command.mode = curricula::SamplingMode::kUniform;
    } else {
      throw ConfigError("env.sampling must be 'normal' or 'uniform'");
    }

    const json& w = j.at("reward");
    env::RewardWeights& rw = ec.reward;
    rw.w_v = w.at("w_v").get<double>();
    rw.w_w = w.at("w_w").get<double>();
    rw.w_h = w.at("w_h").get<double>();
    rw.w_theta = w.at("w_theta").get<double>();
    rw.sigma_v = w.at("sigma_v").get<double>();
    rw.sigma_w = w.at("sigma_w").get<double>();
    rw.sigma_h = w.at("sigma_h").get<double>();
    rw.sigma_theta = w.at("sigma_theta").get<double>();
    rw.w_style = w.at("w_style").get<double>();
    rw.action_rate = w.at("action_rate").get<double>();
    rw.torque = w.at("torque").get<double>();
    rw.vertical_vel = w.at("vertical_vel").get<double>();
    rw.collision = w.at("collision").get<double>();
    c.stage1_feet_air_time = w.at("stage1_feet_air_time").get<double>();

    const json& r = j.at("randomization");
    randomization::Ranges& rr = ec.ranges;
    rr.ground_friction = range_from(r.at("ground_friction"));
    rr.restitution = range_from(r.at("restitution"));
    rr.load_mass = range_from(r.at("load_mass"));
    rr.link_mass_scale = range_from(r.at("link_mass_scale"));
    rr.com_offset = range_from(r.at("com_offset"));
    rr.p_gain_scale = range_from(r.at("p_gain_scale"));
    rr.d_gain_scale = range_from(r.at("d_gain_scale"));
    rr.motor_power_scale = range_from(r.at("motor_power_scale"));
    rr.action_delay = range_from(r.at("action_delay"));

    const json& t = j.at("terrain");
    c.terrain.spec.cell_size = t.at("cell_size").get<double>();
    c.terrain.spec.tile_size = t.at("tile_size").get<double>();
    c.terrain.variants = t.at("variants").get<int>();
    c.terrain.stage1_kinds = kinds_from(t.at("stage1_kinds"));
    c.terrain.stage2_kinds = kinds_from(t.at("stage2_kinds"));

    const json& cu = j.at("curriculum");
    CurriculumConfig& cc = c.curriculum;
    cc.terrain = cu.at("terrain").get<bool>();
    cc.reward = cu.at("reward").get<bool>();
    cc.reward_t1 = cu.at("reward_t1").get<double>();
    cc.reward_t2 = cu.at("reward_t2").get<double>();
    cc.grid = cu.at("grid").get<bool>();
    cc.grid_threshold = cu.at("grid_threshold").get<double>();
    cc.grid_interval = cu.at("grid_interval").get<int>();
    cc.command_grid.vx = range_from(cu.at("grid_initial").at("vx"));
    cc.command_grid.vy = range_from(cu.at("grid_initial").at("vy"));
    cc.command_grid.wz = range_from(cu.at("grid_initial").at("wz"));
    cc.command_grid.cap_vx = range_from(cu.at("grid_cap").at("vx"));
    cc.command_grid.cap_vy = range_from(cu.at("grid_cap").at("vy"));
    cc.command_grid.cap_wz = range_from(cu.at("grid_cap").at("wz"));
    cc.push_interval_relaxed = cu.at("push_interval_relaxed").get<double>();
    cc.push_interval_tight = cu.at("push_interval_tight").get<double>();

    const json& p = j.at("ppo");
    c.ppo.gamma = p.at("gamma").get<double>();
    c.ppo.lambda = p.at("lambda").get<double>();
    c.ppo.clip = p.at("clip").get<double>();
    c.ppo.epochs = p.at("epochs").get<int>();
    c.ppo.minibatches = p.at("minibatches").get<int>();
    c.ppo.learning_rate = p.at("learning_rate").get<double>();
    c.ppo.value_coef = p.at("value_coef").get<double>();
    c.ppo.entropy_coef = p.at("entropy_coef").get<double>();
    c.ppo.max_grad_norm = p.at("max_grad_norm").get<double>();
    c.ppo.steps_per_env = p.at("steps_per_env").get<int>();

    const json& n = j.at("network");
    c.network.history = n.at("history").get<int>();
    c.network.encoder_hidden = n.at("encoder_hidden").get<std::vector<int>>();
    c.network.latent = n.at("latent").get<int>();
    c.network.actor_hidden = n.at("actor_hidden").get<std::vector<int>>();
    c.network.critic_hidden = n.at("critic_hidden").get<std::vector<int>>();
    c.network.init_log_std = n.at("init_log_std").get<double>();

    const json& a = j.at("amp");
    c.amp.enabled = a.at("enabled").get<bool>();
    c.amp.discriminator.hidden = a.at("hidden").get<std::vector<int>>();
    c.amp.discriminator.learning_rate = a.at("learning_rate").get<double>();
    c.amp.discriminator.gp_weight = a.at("gp_weight").get<double>();
    c.amp.discriminator.batch_expert = a.at("batch_expert").get<int>();
    c.amp.discriminator.batch_policy = a.at("batch_policy").get<int>();
    c.amp.discriminator.gate = a.at("gate").get<double>();
    c.amp.pairs = a.at("pairs").get<Eigen::Index>();
    c.amp.dataset = a.at("dataset").get<std::string>();
    c.amp.fresh_policy = a.at("fresh_policy").get<bool>();

    const json& ev = j.at("eval");
    c.eval.repetitions = ev.at("repetitions").get<int>();
    c.eval.duration = ev.at("duration").get<double>();
    c.eval.resample_interval = ev.at("resample_interval").get<double>();
    c.eval.vx = range_from(ev.at("vx"));
    c.eval.vy = range_from(ev.at("vy"));
    c.eval.wz = range_from(ev.at("wz"));
    c.eval.posture = ev.at("posture").get<bool>();
    c.eval.tile_size = ev.at("tile_size").get<double>();
    c.eval.terrain_level = ev.at("terrain_level").get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (num_envs < 1) throw ConfigError("num_envs must be positive");
  if (total_updates < 1) throw ConfigError("total_updates must be positive");
  if (stage == Stage::kBoth && (stage1_updates < 1 || stage1_updates >= total_updates)) {
    throw ConfigError("stage1_updates must lie in [1, total_updates) when stage is 'both'");
  }
  if (checkpoint_interval < 1) throw ConfigError("checkpoint_interval must be positive");
  if (env.control_dt <= 0.0 || env.substeps < 1 || env.max_episode_steps < 1) {
    throw ConfigError("env timing values must be positive");
  }
  if (terrain.spec.cell_size <= 0.0 || terrain.spec.tile_size < 2.0) throw ConfigError("terrain tile is too small");
  if (terrain.variants < 1) throw ConfigError("terrain.variants must be positive");
  if (terrain.stage1_kinds.empty() || terrain.stage2_kinds.empty()) throw ConfigError("terrain kind lists must not be empty");
  if (!(curriculum.reward_t1 >= 0.0 && curriculum.reward_t1 < curriculum.reward_t2 && curriculum.reward_t2 <= 1.0)) {
    throw ConfigError("curriculum thresholds must satisfy 0 <= reward_t1 < reward_t2 <= 1");
  }
  if (!curriculum.command_grid.valid()) throw ConfigError("command grid must lie inside its caps");
  if (curriculum.grid_interval < 1) throw ConfigError("curriculum.grid_interval must be positive");
  for (double s : {env.reward.sigma_v, env.reward.sigma_w, env.reward.sigma_h, env.reward.sigma_theta}) {
    if (!(s > 0.0)) throw ConfigError("reward sigmas must be positive");
  }
  ppo.validate();
  if (network.history < 1 || network.latent < 1) throw ConfigError("network.history and network.latent must be positive");
  if (amp.discriminator.batch_expert < 1 || amp.discriminator.batch_policy < 1) {
    throw ConfigError("AMP batch sizes must be positive");
  }
  if (amp.pairs < amp::kMinExpertPairs) {
    throw ConfigError("amp.pairs must be at least " + std::to_string(amp::kMinExpertPairs));
  }
  if (eval.repetitions < 1 || eval.duration <= 0.0 || eval.resample_interval <= 0.0) {
    throw ConfigError("eval settings must be positive");
  }
}

TrainConfig load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

std::string digest(const TrainConfig& c) { return io::fnv1a_hex(to_json(c).dump()); }

}  // namespace palo::config
