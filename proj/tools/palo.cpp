// palo: train, evaluate, collect AMP data, serve and inspect checkpoints.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime failure.
// Log verbosity comes from PALO_LOG_LEVEL (trace, debug, info, warn, error, off).

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "palo/archive.hpp"
#include "palo/config.hpp"
#include "palo/errors.hpp"
#include "palo/eval.hpp"
#include "palo/run.hpp"
#include "palo/server.hpp"
#include "palo/trainer.hpp"

using namespace palo;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

// Logs go to stderr so stdout stays clean for JSON output.
void configure_logging() {
  spdlog::set_default_logger(spdlog::stderr_color_mt("palo"));
  const char* level = std::getenv("PALO_LOG_LEVEL");
  spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::info);
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
}

config::TrainConfig load_config(const std::string& path) {
  return path.empty() ? config::TrainConfig{} : config::load(path);
}

void write_json(const std::string& path, const json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << j.dump(2) << '\n';
  spdlog::info("wrote {}", path);
}

struct TrainArgs {
  std::string config;
  std::string out = "runs/palo";
  bool resume = false;
  std::string stage;
  std::optional<std::uint64_t> seed;
  int log_interval = 10;
};

int cmd_train(const TrainArgs& a) {
  config::TrainConfig cfg = load_config(a.config);
  if (!a.stage.empty()) {
    json j = config::to_json(cfg);
    j["stage"] = a.stage;
    cfg = config::from_json(j);
  }
  if (a.seed) cfg.seed = *a.seed;
  train::RunOptions opts;
  opts.out_dir = a.out;
  opts.resume = a.resume;
  opts.log_interval = a.log_interval;
  const json summary = train::run_training(cfg, opts);
  std::cout << summary.dump(2) << '\n';
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string scenario = "flat_dynamic";
  std::string config;
  std::string out;
  std::uint64_t seed = 1;
  int repetitions = 0;
  bool force = false;
  bool no_series = false;
};

int cmd_eval(const EvalArgs& a) {
  const train::LoadedPolicy p = train::load_policy(a.checkpoint);
  config::TrainConfig cfg = p.config;
  if (!a.config.empty()) {
    cfg = config::load(a.config);
    if (config::digest(cfg) != p.digest) {
      if (!a.force) {
        throw CheckpointMismatch("checkpoint digest " + p.digest + " does not match config " + config::digest(cfg) +
                                 "; pass --force to evaluate anyway");
      }
      spdlog::warn("config digest differs from the checkpoint; continuing because of --force");
    }
    if (rl::ActorCritic<float>(cfg.network).param_count() != p.net.param_count()) {
      throw CheckpointMismatch("network shapes in the config disagree with the checkpoint");
    }
  }
  eval::Options opts = eval::options_from(cfg, a.seed);
  if (a.repetitions > 0) opts.repetitions = a.repetitions;
  opts.series = !a.no_series;
  const eval::Scenario scenario = eval::parse_scenario(a.scenario, cfg.eval.terrain_level);
  json report = eval::evaluate(p.net, scenario, opts);
  report["checkpoint"] = a.checkpoint;
  report["digest"] = p.digest;
  report["policy_update"] = p.update;
  const json& s = report["summary"]["mean"];
  spdlog::info("{}: r_v {:.3f} r_w {:.3f} r_h {:.3f} r_theta {:.3f} length {:.2f}", scenario.name,
               s["r_v"].get<double>(), s["r_w"].get<double>(), s["r_h"].get<double>(), s["r_theta"].get<double>(),
               s["length_fraction"].get<double>());
  write_json(a.out, report);
  return 0;
}

struct CollectArgs {
  std::string checkpoint;
  std::string out = "amp_dataset.palo";
  Eigen::Index pairs = amp::kMinExpertPairs;
  std::uint64_t seed = 1;
  int envs = 0;
};

int cmd_collect(const CollectArgs& a) {
  const train::LoadedPolicy p = train::load_policy(a.checkpoint);
  if (p.phase != train::Phase::kStage1) spdlog::warn("collecting expert data from a {} policy", to_string(p.phase));
  const amp::ExpertDataset d = train::collect_expert(p, a.pairs, a.seed, a.envs);
  d.save(a.out);
  spdlog::info("wrote {} pairs to {} (mean r_v {:.3f})", d.size(), a.out, d.metadata["mean_r_v"].get<double>());
  return 0;
}

struct ServeArgs {
  std::string checkpoint;
  std::string host = "127.0.0.1";
  int port = 8765;
  std::uint64_t seed = 1;
  long steps = -1;
};

int cmd_serve(const ServeArgs& a) {
  const train::LoadedPolicy p = train::load_policy(a.checkpoint);
  serve::ServerOptions so;
  so.host = a.host;
  so.port = a.port;
  so.reference_height = dynamics::RobotModel::a1_like().reference_height;
  serve::TelemetryServer server(so);
  server.start();
  serve::SimOptions sim_opts;
  sim_opts.seed = a.seed;
  serve::SimSession sim(p.net, sim_opts);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  spdlog::info("serving {} on {}:{} (protocol {})", a.checkpoint, a.host, server.port(), serve::kProtocolVersion);
  serve::run(server, sim, g_stop, a.steps);
  server.stop();
  return 0;
}

int cmd_inspect(const std::string& path) {
  const io::TensorArchive a = io::TensorArchive::load(path);
  json out = {{"path", path}, {"kind", a.kind()}, {"digest", a.digest()}, {"tensors", json::array()}};
  for (const auto& t : a.tensors()) {
    out["tensors"].push_back({{"name", t.name}, {"dtype", static_cast<int>(t.dtype)}, {"shape", t.shape}});
  }
  json meta = a.meta();
  meta.erase("envs");  // bulky per-environment state
  out["meta"] = meta;
  if (a.kind() == "checkpoint") {
    const train::LoadedPolicy p = train::load_policy(a);
    out["policy_parameters"] = p.net.param_count();
    out["digest_consistent"] = true;
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"palo: posture-aware quadruped locomotion training"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "run stage 1, expert collection and stage 2 as configured");
  train->add_option("-c,--config", train_args.config, "JSON config (defaults when omitted)");
  train->add_option("-o,--out", train_args.out, "output directory");
  train->add_flag("--resume", train_args.resume, "continue from the newest checkpoint in --out");
  train->add_option("--stage", train_args.stage, "override the configured stage")
      ->check(CLI::IsMember({"stage1", "stage2", "both"}));
  train->add_option("--seed", train_args.seed, "override the configured seed");
  train->add_option("--log-interval", train_args.log_interval, "updates between progress lines");

  EvalArgs eval_args;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a tracking scenario");
  ev->add_option("checkpoint", eval_args.checkpoint)->required();
  ev->add_option("-s,--scenario", eval_args.scenario, "flat_dynamic or static:<kind>[:<level>]");
  ev->add_option("-c,--config", eval_args.config, "config to check the checkpoint against");
  ev->add_option("-o,--out", eval_args.out, "report path (stdout when omitted)");
  ev->add_option("--seed", eval_args.seed);
  ev->add_option("--repetitions", eval_args.repetitions);
  ev->add_flag("--force", eval_args.force, "evaluate even if the config digest differs");
  ev->add_flag("--no-series", eval_args.no_series, "omit per-step time series");

  CollectArgs collect_args;
  auto* collect = app.add_subcommand("collect-amp", "collect expert transitions from a stage-1 checkpoint");
  collect->add_option("checkpoint", collect_args.checkpoint)->required();
  collect->add_option("-o,--out", collect_args.out);
  collect->add_option("--pairs", collect_args.pairs);
  collect->add_option("--seed", collect_args.seed);
  collect->add_option("--envs", collect_args.envs, "parallel environments (config value when 0)");

  ServeArgs serve_args;
  auto* sv = app.add_subcommand("serve", "run a checkpoint in real time behind the teleop socket");
  sv->add_option("checkpoint", serve_args.checkpoint)->required();
  sv->add_option("--host", serve_args.host);
  sv->add_option("-p,--port", serve_args.port);
  sv->add_option("--seed", serve_args.seed);
  sv->add_option("--steps", serve_args.steps, "stop after this many control steps");

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect-checkpoint", "print archive metadata and tensor shapes");
  inspect->add_option("path", inspect_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_args);
    if (*ev) return cmd_eval(eval_args);
    if (*collect) return cmd_collect(collect_args);
    if (*sv) return cmd_serve(serve_args);
    if (*inspect) return cmd_inspect(inspect_path);
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
  return 0;
}
