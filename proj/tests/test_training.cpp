#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <spdlog/spdlog.h>

#include "fixtures.hpp"
#include "palo/errors.hpp"
#include "palo/eval.hpp"
#include "palo/run.hpp"
#include "palo/trainer.hpp"

using namespace palo;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Interrupt : std::runtime_error {
  Interrupt() : std::runtime_error("interrupted") {}
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  int n = 0;
  std::string line;
  while (std::getline(in, line)) n += line.empty() ? 0 : 1;
  return n;
}

// One smoke run shared by the cases that only read its outputs.
const fs::path& smoke_run() {
  static fixture::TempDir dir("palo_smoke");
  static bool done = false;
  if (!done) {
    spdlog::set_level(spdlog::level::warn);
    train::RunOptions opts;
    opts.out_dir = dir.path() / "run";
    train::run_training(fixture::load_config("smoke.json"), opts);
    done = true;
  }
  static const fs::path root = dir.path() / "run";
  return root;
}

double eval_r_v(const rl::ActorCritic<float>& policy, const config::TrainConfig& cfg, int reps, double duration) {
  eval::Options o = eval::options_from(cfg, 3);
  o.repetitions = reps;
  o.duration = duration;
  o.series = false;
  return eval::evaluate(policy, eval::parse_scenario("flat_dynamic"), o)["summary"]["mean"]["r_v"].get<double>();
}

}  // namespace

TEST_CASE("the smoke config trains both phases and writes checkpoints") {
  const fs::path& root = smoke_run();
  const train::RunPaths paths{root};
  CHECK(fs::exists(paths.config()));
  CHECK(fs::exists(paths.dataset()));
  int checkpoints = 0;
  for (const char* phase : {"stage1", "stage2"}) {
    CHECK(fs::exists(paths.final_checkpoint(phase)));
    for (const auto& e : fs::directory_iterator(paths.phase_dir(phase))) {
      checkpoints += e.path().filename().string().rfind("ckpt_", 0) == 0 ? 1 : 0;
    }
  }
  CHECK(checkpoints >= 1);
  CHECK(count_lines(paths.metrics()) == 50);

  std::ifstream in(paths.metrics());
  std::string line;
  while (std::getline(in, line)) {
    const json rec = json::parse(line);
    CHECK(std::isfinite(rec["reward"].get<double>()));
    CHECK(rec["r_v"].get<double>() >= 0.0);
    CHECK(rec["r_v"].get<double>() <= 1.0);
  }

  const train::LoadedPolicy p = train::load_policy(paths.final_checkpoint("stage2").string());
  CHECK(p.phase == train::Phase::kStage2);
  CHECK(p.update == 50);
  CHECK(p.digest == config::digest(fixture::load_config("smoke.json")));
}

TEST_CASE("an existing run directory is not overwritten") {
  train::RunOptions opts;
  opts.out_dir = smoke_run();
  CHECK_THROWS_AS(train::run_training(fixture::load_config("smoke.json"), opts), ConfigError);
  config::TrainConfig other = fixture::load_config("smoke.json");
  other.seed = 99;
  opts.resume = true;
  CHECK_THROWS_AS(train::run_training(other, opts), ConfigError);
}

TEST_CASE("stage 2 without an expert dataset names the collection step") {
  config::TrainConfig cfg = fixture::load_config("smoke.json");
  cfg.stage = config::Stage::kStage2;
  fixture::TempDir dir("palo_stage2");
  train::RunOptions opts;
  opts.out_dir = dir.path() / "run";
  try {
    train::run_training(cfg, opts);
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("collect-amp") != std::string::npos);
  }
}

TEST_CASE("an interrupted run resumes to the same final checkpoint") {
  config::TrainConfig cfg = fixture::load_config("smoke.json");
  cfg.stage = config::Stage::kStage1;
  cfg.checkpoint_interval = 5;
  fixture::TempDir dir("palo_resume");

  train::RunOptions straight;
  straight.out_dir = dir.path() / "straight";
  train::run_training(cfg, straight);

  train::RunOptions broken;
  broken.out_dir = dir.path() / "broken";
  int seen = 0;
  broken.on_update = [&](const json&) {
    if (++seen == 13) throw Interrupt();
  };
  CHECK_THROWS_AS(train::run_training(cfg, broken), Interrupt);
  broken.on_update = nullptr;
  broken.resume = true;
  train::run_training(cfg, broken);

  const train::RunPaths a{straight.out_dir};
  const train::RunPaths b{broken.out_dir};
  CHECK(read_file(a.final_checkpoint("stage1")) == read_file(b.final_checkpoint("stage1")));
  CHECK(read_file(a.metrics()) == read_file(b.metrics()));
}

TEST_CASE("evaluation of an untrained policy") {
  const config::TrainConfig cfg = config::TrainConfig{};
  rl::ActorCritic<float> net(cfg.network);
  Rng rng(1);
  net.init(rng);

  const double r_v = eval_r_v(net, cfg, 2, 10.0);
  MESSAGE("untrained evaluation R_v = " << r_v);
  CHECK(r_v < 0.3);

  eval::Options o = eval::options_from(cfg, 4);
  o.repetitions = 1;
  o.duration = 2.0;
  const json a = eval::evaluate(net, eval::parse_scenario("flat_dynamic"), o);
  const json b = eval::evaluate(net, eval::parse_scenario("flat_dynamic"), o);
  CHECK(a == b);
  const json& series = a["repetitions"][0]["series"];
  CHECK(series["command"].size() == 6);
  CHECK(series["actual"].size() == 6);
  CHECK(series["t"].size() == 100);
  CHECK(a["mean_abs_error"]["mean"].size() == 6);
}

TEST_CASE("scenario parsing") {
  const eval::Scenario s = eval::parse_scenario("static:stairs_up:7");
  CHECK_FALSE(s.dynamic);
  CHECK(s.kind == terrain::Kind::kStairsUp);
  CHECK(s.level == 7);
  CHECK(eval::parse_scenario("static:wavy").level == 5);
  CHECK(eval::parse_scenario("flat_dynamic").dynamic);
  CHECK_THROWS_AS(eval::parse_scenario("moonwalk"), ConfigError);
}

TEST_CASE("the MLP-50 ablation trains without shape errors") {
  config::TrainConfig cfg = fixture::load_config("ablation_mlp50.json");
  cfg.num_envs = 4;
  cfg.total_updates = 3;
  cfg.stage1_updates = 2;
  cfg.ppo.steps_per_env = 8;
  cfg.network.encoder_hidden = {32};
  cfg.network.actor_hidden = {32};
  cfg.network.critic_hidden = {32};
  cfg.terrain.spec = {0.1, 16.0};
  train::Trainer t(cfg, train::Phase::kStage1);
  CHECK(t.policy().encoder.input_dim() == 50 * 60);
  while (!t.finished()) CHECK(std::isfinite(t.update()["reward"].get<double>()));
}

TEST_CASE("the trained critic reads the privileged channels") {
  const train::LoadedPolicy p = train::load_policy(train::RunPaths{smoke_run()}.final_checkpoint("stage2").string());
  train::Trainer t(p.config, train::Phase::kStage1);
  t.envs().reset_all();
  const Eigen::MatrixXf full = t.envs().critic_inputs<float>();
  Eigen::MatrixXf blind = full;
  blind.middleRows(env::kProprioDim, env::kPrivilegedDim).setZero();
  const Eigen::MatrixXf v_full = p.net.critic_forward(full);
  const Eigen::MatrixXf v_blind = p.net.critic_forward(blind);
  CHECK((v_full - v_blind).cwiseAbs().maxCoeff() > 1e-3f);
}

TEST_CASE("expert collection from a checkpoint") {
  const train::LoadedPolicy p = train::load_policy(train::RunPaths{smoke_run()}.final_checkpoint("stage1").string());
  const amp::ExpertDataset d = train::collect_expert(p, amp::kMinExpertPairs, 5, 8);
  CHECK(d.size() == amp::kMinExpertPairs);
  CHECK(d.features.allFinite());
  const amp::ExpertDataset again = train::collect_expert(p, amp::kMinExpertPairs, 5, 8);
  CHECK(again.features == d.features);
}

TEST_CASE("checkpoints refuse a different configuration") {
  const io::TensorArchive a = io::TensorArchive::load(train::RunPaths{smoke_run()}.latest("stage1").string());
  config::TrainConfig other = fixture::load_config("smoke.json");
  other.seed = 12;
  train::Trainer t(other, train::Phase::kStage1);
  CHECK_THROWS_AS(t.restore(a), CheckpointMismatch);
}
