#pragma once

#include <Eigen/Core>

#include <memory>
#include <vector>

#include <json.hpp>

#include "palo/archive.hpp"
#include "palo/env.hpp"
#include "palo/nn.hpp"
#include "palo/rl.hpp"

namespace palo::rollout {

struct VecEnvConfig {
  int num_envs = 64;
  int history = 5;
  env::EnvConfig env;
  std::vector<terrain::Kind> kinds{terrain::Kind::kRoughFlat};
  bool terrain_curriculum = true;
  std::uint64_t seed = 1;
};

struct EpisodeRecord {
  int env = 0;
  int length = 0;
  double ret = 0.0;
  double mean_r_v = 0.0;
  double distance = 0.0;
  bool timeout = false;
  bool collision = false;
  bool fell = false;
  bool out_of_bounds = false;
  bool nonfinite = false;
  curricula::TerrainAssignment terrain;
};

// Per-environment outcome of one control step.
struct StepBatch {
  Eigen::VectorXd reward;      // task + regularizers, style excluded
  Eigen::VectorXd done;        // 1 when the episode ended on this step
  Eigen::VectorXd bootstrap;   // 1 when it ended by time limit or leaving the tile
  Eigen::VectorXd r_v;
  std::vector<Command6D> command;
  Eigen::MatrixXd amp_pairs;        // (86 x N): features before and after the step
  Eigen::MatrixXd terminal_critic;  // (96 x N): critic input of the final state, valid where bootstrap = 1
  std::vector<EpisodeRecord> episodes;
};

// A set of independent environments with per-environment history windows.
// Environments share only the read-only terrain bank, so stepping them on
// separate threads gives results identical to stepping them in order.
class VecEnv {
 public:
  VecEnv(dynamics::RobotModel model, VecEnvConfig config, std::shared_ptr<const terrain::TerrainBank> bank);

  int size() const { return static_cast<int>(slots_.size()); }
  const VecEnvConfig& config() const { return config_; }

  void reset_all();

  // actions: (12 x N). Environments that finish are reset before returning.
  StepBatch step(const Eigen::MatrixXd& actions, bool parallel = true);

  // Network inputs for the current observations.
  template <typename S>
  nn::Matrix<S> windows() const;
  template <typename S>
  nn::Matrix<S> commands() const;
  template <typename S>
  nn::Matrix<S> critic_inputs() const;

  void set_grid(const curricula::CommandGrid& grid);
  void set_posture_multiplier(double m);
  void set_push_interval_floor(double seconds);

  env::Env& env(int i) { return slots_[static_cast<std::size_t>(i)].env; }
  const env::Env& env(int i) const { return slots_[static_cast<std::size_t>(i)].env; }
  const env::ObservationPair& observation(int i) const { return slots_[static_cast<std::size_t>(i)].obs; }

  // Everything needed to continue bit-exactly; terrains are rebuilt from the bank.
  nlohmann::json save_state(io::TensorArchive& archive, const std::string& prefix) const;
  void load_state(const nlohmann::json& meta, const io::TensorArchive& archive, const std::string& prefix);

 private:
  struct Slot {
    env::Env env;
    env::ObservationPair obs;
    env::AmpStateVec amp = env::AmpStateVec::Zero();
    Eigen::MatrixXd history;  // (60 x H), oldest column first
    double ep_return = 0.0;
    double ep_r_v = 0.0;
  };

  void reset_slot(Slot& slot, curricula::TerrainAssignment assignment);
  void push_history(Slot& slot, const env::ActionVec& action);
  void step_slot(int i, const env::ActionVec& action, StepBatch& out, std::vector<EpisodeRecord>& finished);

  dynamics::RobotModel model_;
  VecEnvConfig config_;
  std::shared_ptr<const terrain::TerrainBank> bank_;
  std::vector<Slot> slots_;
};

// Critic input (proprio, privileged, command) from one observation pair.
Eigen::Matrix<double, rl::kCriticInputDim, 1> critic_input(const env::ObservationPair& obs);

nlohmann::json to_json(const env::EnvState& state);
env::EnvState env_state_from_json(const nlohmann::json& j);

}  // namespace palo::rollout
