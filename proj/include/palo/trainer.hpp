#pragma once

#include <memory>
#include <string>

#include <json.hpp>

#include "palo/amp.hpp"
#include "palo/archive.hpp"
#include "palo/config.hpp"
#include "palo/curricula.hpp"
#include "palo/rl.hpp"
#include "palo/vec_env.hpp"

namespace palo::train {

enum class Phase { kStage1, kStage2 };
std::string to_string(Phase p);
Phase phase_from_string(const std::string& s);

// Number of updates a phase runs and its offset into the global schedule.
struct PhasePlan {
  int offset = 0;
  int updates = 0;
};
PhasePlan plan(const config::TrainConfig& cfg, Phase phase);

// Env and vectorization settings of a phase (terrain kinds, gait bonus).
rollout::VecEnvConfig vec_env_config(const config::TrainConfig& cfg, Phase phase);
std::shared_ptr<const terrain::TerrainBank> make_bank(const config::TrainConfig& cfg, Phase phase);

// One training phase: rollout collection, PPO, discriminator updates and the
// three curricula. Everything it owns goes into checkpoints.
class Trainer {
 public:
  Trainer(config::TrainConfig cfg, Phase phase, std::shared_ptr<const amp::ExpertDataset> dataset = nullptr);

  // Runs one update and returns its metrics record.
  nlohmann::json update();

  bool finished() const { return update_ >= plan_.updates; }
  int update_index() const { return update_; }
  int global_update() const { return plan_.offset + update_; }
  Phase phase() const { return phase_; }
  const config::TrainConfig& config() const { return cfg_; }
  const std::string& digest() const { return digest_; }

  const rl::ActorCritic<float>& policy() const { return net_; }
  void set_policy(const rl::ActorCritic<float>& net);
  const nn::Mlp<float>& discriminator() const { return disc_; }
  rollout::VecEnv& envs() { return *envs_; }
  const curricula::CommandGrid& grid() const { return grid_; }

  io::TensorArchive checkpoint() const;
  void save(const std::string& path) const;
  // Restores the full training state; the archive must come from the same config.
  void restore(const io::TensorArchive& archive);

 private:
  void apply_curricula();

  config::TrainConfig cfg_;
  Phase phase_;
  PhasePlan plan_;
  std::string digest_;
  std::shared_ptr<const amp::ExpertDataset> dataset_;
  nn::Matrix<float> expert_normalized_;
  bool use_amp_ = false;

  rl::ActorCritic<float> net_;
  nn::AdamState<float> adam_;
  nn::Mlp<float> disc_;
  nn::AdamState<float> disc_adam_;
  std::unique_ptr<rollout::VecEnv> envs_;
  curricula::CommandGrid grid_;
  curricula::GridRewardTracker tracker_;
  curricula::RewardStage stage_;
  Rng rng_;
  int update_ = 0;
};

// Policy network stored in a checkpoint, with the config it was trained under.
struct LoadedPolicy {
  config::TrainConfig config;
  std::string digest;
  Phase phase = Phase::kStage1;
  int update = 0;
  curricula::CommandGrid grid;  // command grid the run had reached
  rl::ActorCritic<float> net;
};
LoadedPolicy load_policy(const std::string& path);
LoadedPolicy load_policy(const io::TensorArchive& archive);

// Expert transitions from a stage-1 policy rolled out in its own stage-1
// environment and command grid. `seed` picks the collection streams.
amp::ExpertDataset collect_expert(const LoadedPolicy& policy, Eigen::Index pairs, std::uint64_t seed,
                                  int num_envs = 0);

}  // namespace palo::train
