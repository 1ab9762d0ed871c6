#include "palo/eval.hpp"

#include <cmath>
#include <limits>

#include "palo/errors.hpp"

namespace palo::eval {

using nlohmann::json;

namespace {

constexpr const char* kChannels[6] = {"vx", "vy", "wz", "height", "pitch", "roll"};

json mean_std(const std::vector<json>& reps, const std::string& key) {
  json mean = json::object();
  json stdev = json::object();
  for (const auto& [name, _] : reps.front().at(key).items()) {
    double s = 0.0, s2 = 0.0;
    for (const auto& r : reps) {
      const double v = r.at(key).at(name).get<double>();
      s += v;
      s2 += v * v;
    }
    const double n = static_cast<double>(reps.size());
    const double m = s / n;
    mean[name] = m;
    stdev[name] = std::sqrt(std::max(0.0, s2 / n - m * m));
  }
  return {{"mean", mean}, {"std", stdev}};
}

}  // namespace

Scenario parse_scenario(const std::string& text, int default_level) {
  Scenario s;
  if (text == "flat_dynamic") return s;
  const std::string prefix = "static:";
  if (text.rfind(prefix, 0) != 0) {
    throw ConfigError("unknown scenario '" + text + "'; use flat_dynamic or static:<kind>[:<level>]");
  }
  s.dynamic = false;
  s.name = text;
  std::string rest = text.substr(prefix.size());
  s.level = default_level;
  if (const auto colon = rest.find(':'); colon != std::string::npos) {
    try {
      s.level = std::stoi(rest.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError("scenario level must be an integer in '" + text + "'");
    }
    rest = rest.substr(0, colon);
  }
  if (s.level < 0 || s.level > terrain::kMaxLevel) throw ConfigError("scenario level must lie in [0, 9]");
  s.kind = terrain::kind_from_string(rest);
  return s;
}

PolicyRunner::PolicyRunner(const rl::ActorCritic<float>& policy)
    : policy_(policy), window_(rl::kStepWidth, policy.config().history) {}

void PolicyRunner::reset(const env::ProprioVec& obs) {
  latest_ = obs;
  for (Eigen::Index c = 0; c < window_.cols(); ++c) window_.col(c) << obs, Eigen::VectorXd::Zero(env::kActionDim);
}

env::ActionVec PolicyRunner::act() const {
  const Eigen::VectorXf w = Eigen::Map<const Eigen::VectorXd>(window_.data(), window_.size()).cast<float>();
  const Eigen::VectorXf cmd = latest_.segment<rl::kCommandDim>(env::channel::kCommand).cast<float>();
  return policy_.actor_forward(w, cmd).col(0).cast<double>();
}

void PolicyRunner::observe(const env::ProprioVec& obs, const env::ActionVec& prev_action) {
  latest_ = obs;
  const Eigen::Index h = window_.cols();
  if (h > 1) window_.leftCols(h - 1) = window_.rightCols(h - 1).eval();
  window_.col(h - 1) << obs, prev_action;
}

Options options_from(const config::TrainConfig& cfg, std::uint64_t seed) {
  Options o;
  o.repetitions = cfg.eval.repetitions;
  o.duration = cfg.eval.duration;
  o.resample_interval = cfg.eval.resample_interval;
  o.ranges.cap_vx = {-limits::kLinVel, limits::kLinVel};
  o.ranges.vx = cfg.eval.vx;
  o.ranges.vy = cfg.eval.vy;
  o.ranges.wz = cfg.eval.wz;
  o.posture = cfg.eval.posture;
  o.tile_size = cfg.eval.tile_size;
  o.cell_size = cfg.terrain.spec.cell_size;
  o.seed = seed;
  return o;
}

json evaluate(const rl::ActorCritic<float>& policy, const Scenario& scenario, const Options& options) {
  if (options.repetitions < 1) throw ConfigError("evaluation needs at least one repetition");
  const dynamics::RobotModel model = dynamics::RobotModel::a1_like();
  env::EnvConfig ecfg;
  ecfg.randomize = false;
  ecfg.observation_noise = false;
  ecfg.pushes = false;
  ecfg.max_episode_steps = static_cast<int>(std::lround(options.duration / ecfg.control_dt));
  ecfg.resample_interval = scenario.dynamic ? options.resample_interval : std::numeric_limits<double>::infinity();
  ecfg.command.posture = options.posture;

  const auto map = terrain::generate_terrain(scenario.kind, scenario.level, options.seed,
                                             {options.cell_size, options.tile_size});
  std::vector<json> reps;
  json rep_list = json::array();
  for (int rep = 0; rep < options.repetitions; ++rep) {
    env::Env e(model, ecfg, Rng(options.seed, 50 + static_cast<std::uint64_t>(rep)));
    e.set_grid(options.ranges);
    e.reset(map, {scenario.kind, scenario.level});
    if (!scenario.dynamic) e.set_command(clamp_command(scenario.command, model.reference_height).command);

    PolicyRunner runner(policy);
    runner.reset(e.observation().proprio);

    json series = {{"t", json::array()}, {"command", json::object()}, {"actual", json::object()}};
    for (const char* ch : kChannels) {
      series["command"][ch] = json::array();
      series["actual"][ch] = json::array();
    }
    double sums[4] = {0, 0, 0, 0};
    double abs_err[6] = {0, 0, 0, 0, 0, 0};
    int steps = 0;
    bool collision = false, fell = false, out_of_bounds = false, timeout = false;
    while (true) {
      const env::StepResult r = e.step(runner.act());
      ++steps;
      const Command6D& c = r.info.command;
      const env::Actual6D a = e.actual();
      const double commanded[6] = {c.vx, c.vy, c.wz, model.reference_height + c.dh, c.pitch, c.roll};
      const double actual[6] = {a.vx, a.vy, a.wz, a.height, a.pitch, a.roll};
      for (int k = 0; k < 6; ++k) abs_err[k] += std::abs(actual[k] - commanded[k]);
      sums[0] += r.info.task.r_v;
      sums[1] += r.info.task.r_w;
      sums[2] += r.info.task.r_h;
      sums[3] += r.info.task.r_theta;
      if (options.series) {
        series["t"].push_back(steps * ecfg.control_dt);
        for (int k = 0; k < 6; ++k) {
          series["command"][kChannels[k]].push_back(commanded[k]);
          series["actual"][kChannels[k]].push_back(actual[k]);
        }
      }
      if (r.done) {
        collision = r.info.collision;
        fell = r.info.fell || r.info.nonfinite;
        out_of_bounds = r.info.out_of_bounds;
        timeout = r.info.timeout;
        break;
      }
      runner.observe(r.obs.proprio, e.state().prev_action);
    }
    json summary = {{"r_v", sums[0] / steps},
                    {"r_w", sums[1] / steps},
                    {"r_h", sums[2] / steps},
                    {"r_theta", sums[3] / steps},
                    {"episode_length", steps},
                    {"length_fraction", static_cast<double>(steps) / ecfg.max_episode_steps},
                    {"collision", collision ? 1.0 : 0.0},
                    {"fell", fell ? 1.0 : 0.0},
                    {"out_of_bounds", out_of_bounds ? 1.0 : 0.0},
                    {"timeout", timeout ? 1.0 : 0.0}};
    json errors = json::object();
    for (int k = 0; k < 6; ++k) errors[kChannels[k]] = abs_err[k] / steps;
    json rep_json = {{"repetition", rep}, {"summary", summary}, {"mean_abs_error", errors}};
    reps.push_back(rep_json);
    if (options.series) rep_json["series"] = std::move(series);
    rep_list.push_back(std::move(rep_json));
  }
  json report;
  report["scenario"] = scenario.name;
  report["seed"] = options.seed;
  report["control_hz"] = 1.0 / ecfg.control_dt;
  report["duration"] = options.duration;
  report["repetitions"] = std::move(rep_list);
  report["summary"] = mean_std(reps, "summary");
  report["mean_abs_error"] = mean_std(reps, "mean_abs_error");
  return report;
}

}  // namespace palo::eval
