#pragma once

#include <string>

#include <json.hpp>

#include "palo/config.hpp"
#include "palo/rl.hpp"

namespace palo::eval {

// "flat_dynamic": commands resampled every resample_interval on flat ground.
// "static:<kind>[:<level>]": constant command (1, 0, 0, 0, 0, 0) on a terrain.
struct Scenario {
  std::string name = "flat_dynamic";
  bool dynamic = true;
  terrain::Kind kind = terrain::Kind::kRoughFlat;
  int level = 0;
  Command6D command{1.0, 0.0, 0.0, 0.0, 0.0, 0.0};
};
Scenario parse_scenario(const std::string& text, int default_level = 5);

struct Options {
  int repetitions = 5;
  double duration = 20.0;
  double resample_interval = 2.0;
  curricula::CommandGrid ranges;
  bool posture = true;
  double tile_size = 40.0;
  double cell_size = 0.05;
  std::uint64_t seed = 1;
  bool series = true;  // include the per-step time series
};
// Runs a policy deterministically on one environment, keeping its own
// history window of [proprio; previous action] columns.
class PolicyRunner {
 public:
  explicit PolicyRunner(const rl::ActorCritic<float>& policy);

  // Starts a fresh window padded with the first observation and zero actions.
  void reset(const env::ProprioVec& obs);
  env::ActionVec act() const;
  void observe(const env::ProprioVec& obs, const env::ActionVec& prev_action);

 private:
  const rl::ActorCritic<float>& policy_;
  Eigen::MatrixXd window_;  // (60 x history), oldest first
  env::ProprioVec latest_ = env::ProprioVec::Zero();
};

Options options_from(const config::TrainConfig& cfg, std::uint64_t seed);

// Deterministic policy, nominal dynamics, no observation noise or pushes.
// Returns per-repetition summaries (and series) plus mean and std across them.
nlohmann::json evaluate(const rl::ActorCritic<float>& policy, const Scenario& scenario, const Options& options);

}  // namespace palo::eval
