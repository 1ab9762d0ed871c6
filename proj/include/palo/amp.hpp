#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include <json.hpp>

#include "palo/env.hpp"
#include "palo/nn.hpp"
#include "palo/rl.hpp"
#include "palo/vec_env.hpp"

namespace palo::amp {

inline constexpr int kPairDim = 2 * env::kAmpStateDim;
inline constexpr Eigen::Index kMinExpertPairs = 10'000;

struct AmpConfig {
  std::vector<int> hidden{1024, 512};
  double learning_rate = 1e-4;
  double gp_weight = 10.0;
  int batch_expert = 512;
  int batch_policy = 512;
  double gate = 0.7;  // minimum mean velocity-tracking reward of the expert policy
};

// Transition pairs (s, s') column-wise with normalization statistics computed
// on these expert samples.
struct ExpertDataset {
  static constexpr double kStdFloor = 1e-3;

  Eigen::MatrixXd features;  // (86 x N), raw
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
  std::vector<std::int64_t> episode;  // episode id per pair
  nlohmann::json metadata = nlohmann::json::object();

  // Throws ConfigError below `min_pairs` pairs.
  static ExpertDataset from_pairs(Eigen::MatrixXd pairs, std::vector<std::int64_t> episode, nlohmann::json metadata,
                                  Eigen::Index min_pairs = kMinExpertPairs);

  Eigen::Index size() const { return features.cols(); }
  Eigen::MatrixXd normalize(const Eigen::MatrixXd& raw) const;

  void save(const std::string& path) const;
  static ExpertDataset load(const std::string& path);
};

// max(0, 1 - 0.25 (d - 1)^2)
double style_reward(double d);

template <typename S>
nn::Mlp<S> make_discriminator(const std::vector<int>& hidden);

struct AmpMetrics {
  double loss = 0.0;
  double expert_loss = 0.0;
  double policy_loss = 0.0;
  double grad_penalty = 0.0;
  double expert_acc = 0.0;
  double policy_acc = 0.0;
  double d_expert = 0.0;
  double d_policy = 0.0;
};

// Least-squares adversarial loss with the input-gradient penalty on expert
// samples; inputs already normalized. Adds d loss / d params to `grad`.
template <typename S>
AmpMetrics amp_loss(const nn::Mlp<S>& disc, const nn::Matrix<S>& expert, const nn::Matrix<S>& policy,
                    double gp_weight, nn::Vector<S>* grad);

// One Adam step on amp_loss. NonFiniteLoss restores the parameters.
template <typename S>
AmpMetrics amp_update(nn::Mlp<S>& disc, nn::AdamState<S>& adam, const nn::Matrix<S>& expert,
                      const nn::Matrix<S>& policy, double gp_weight);

// Style reward per raw (86 x N) transition pair.
template <typename S>
Eigen::VectorXd style_rewards_for_batch(const nn::Mlp<S>& disc, const ExpertDataset& stats,
                                        const Eigen::MatrixXd& raw_pairs);

// Random minibatch of `count` columns.
Eigen::MatrixXd sample_columns(const Eigen::MatrixXd& m, int count, Rng& rng);

struct CollectOptions {
  Eigen::Index pairs = kMinExpertPairs;
  Eigen::Index min_pairs = kMinExpertPairs;
  double gate = 0.7;
  std::string policy_digest;
};

// Rolls out the deterministic policy and stores consecutive feature pairs,
// ordered by environment then time. PolicyTooWeak when the mean velocity
// tracking reward of the rollout is below the gate.
ExpertDataset collect_expert_dataset(const rl::ActorCritic<float>& policy, rollout::VecEnv& envs,
                                     const CollectOptions& options);

}  // namespace palo::amp
