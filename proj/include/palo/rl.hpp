#pragma once

#include <Eigen/Core>

#include <span>
#include <vector>

#include "palo/env.hpp"
#include "palo/nn.hpp"
#include "palo/rng.hpp"

namespace palo::rl {

using nn::Matrix;
using nn::Vector;
template <typename S>
using Row = Eigen::Matrix<S, 1, Eigen::Dynamic>;

inline constexpr int kCommandDim = 6;
// One history step: proprio observation plus the action that preceded it.
inline constexpr int kStepWidth = env::kProprioDim + env::kActionDim;
inline constexpr int kCriticInputDim = env::kProprioDim + env::kPrivilegedDim + kCommandDim;

struct NetworkConfig {
  int history = 5;
  std::vector<int> encoder_hidden{256, 128};
  int latent = 32;
  std::vector<int> actor_hidden{512, 256, 128};
  std::vector<int> critic_hidden{512, 256, 128};
  double init_log_std = 0.0;

  int window_dim() const { return history * kStepWidth; }
};

// Asymmetric actor-critic. The actor sees a window of proprio history encoded
// to a latent plus the command; the critic sees proprio, privileged state and
// the command.
template <typename S>
class ActorCritic {
 public:
  struct ActorCache {
    typename nn::Mlp<S>::Cache encoder;
    typename nn::Mlp<S>::Cache actor;
  };

  ActorCritic() = default;
  explicit ActorCritic(const NetworkConfig& config);

  void init(Rng& rng);

  const NetworkConfig& config() const { return config_; }

  // window: (history*60 x B), cmd: (6 x B) -> mu (12 x B).
  Matrix<S> actor_forward(const Matrix<S>& window, const Matrix<S>& cmd, ActorCache* cache = nullptr) const;
  // Accumulates encoder and actor gradients (flat layout) from dL/dmu.
  void actor_backward(const ActorCache& cache, const Matrix<S>& dmu, Vector<S>& grad) const;

  // critic_in: (96 x B) -> values (1 x B).
  Matrix<S> critic_forward(const Matrix<S>& critic_in, typename nn::Mlp<S>::Cache* cache = nullptr) const;
  Matrix<S> critic_forward(const Matrix<S>& proprio, const Matrix<S>& privileged, const Matrix<S>& cmd) const;
  void critic_backward(const typename nn::Mlp<S>::Cache& cache, const Matrix<S>& dv, Vector<S>& grad) const;

  // Flat layout: encoder | actor | log_std | critic.
  Eigen::Index param_count() const;
  Vector<S> flat_params() const;
  void set_flat_params(const Vector<S>& flat);
  Eigen::Index log_std_offset() const { return encoder.param_count() + actor.param_count(); }
  Eigen::Index critic_offset() const { return log_std_offset() + log_std.size(); }

  template <typename T>
  ActorCritic<T> cast() const {
    ActorCritic<T> out(config_);
    out.set_flat_params(flat_params().template cast<T>());
    return out;
  }

  nn::Mlp<S> encoder;
  nn::Mlp<S> actor;
  Vector<S> log_std;
  nn::Mlp<S> critic;

 private:
  NetworkConfig config_;
};

struct PpoConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  int epochs = 5;
  int minibatches = 4;
  double learning_rate = 3e-4;
  double value_coef = 1.0;
  double entropy_coef = 0.005;
  double max_grad_norm = 1.0;
  int steps_per_env = 24;

  void validate() const;
};

// Advantages and returns laid out (T x N), time-major per environment column.
struct GaeResult {
  Eigen::MatrixXd advantages;
  Eigen::MatrixXd returns;
};

// dones(t, n) = 1 marks that the episode ended after step t; `last_values`
// bootstraps the state following the final step.
GaeResult gae(const Eigen::MatrixXd& rewards, const Eigen::MatrixXd& values, const Eigen::MatrixXd& dones,
              const Eigen::VectorXd& last_values, double gamma, double lambda);
// Same recursion with environments distributed over OpenMP threads.
GaeResult gae_parallel(const Eigen::MatrixXd& rewards, const Eigen::MatrixXd& values, const Eigen::MatrixXd& dones,
                       const Eigen::VectorXd& last_values, double gamma, double lambda);

// Zero mean, unit variance in place.
void normalize_advantages(Eigen::Ref<Eigen::VectorXd> advantages);

struct PolicyLoss {
  double loss = 0.0;
  double clip_fraction = 0.0;
  Eigen::VectorXd grad;  // d loss / d log_prob_new per sample
};

// Clipped surrogate -mean(min(r*A, clip(r, 1-eps, 1+eps)*A)), r = exp(new - old).
PolicyLoss ppo_policy_loss(std::span<const double> log_prob_new, std::span<const double> log_prob_old,
                           std::span<const double> advantage, double eps);

// 0.5 * mean((v - g)^2); writes d loss / d v when `grad` is non-null.
double value_loss(std::span<const double> values, std::span<const double> returns, Eigen::VectorXd* grad = nullptr);

// Columns are samples.
template <typename S>
struct RolloutBatch {
  Matrix<S> window;
  Matrix<S> command;
  Matrix<S> critic_in;
  Matrix<S> actions;
  Eigen::VectorXd log_prob;
  Eigen::VectorXd values;
  Eigen::VectorXd advantages;  // already normalized
  Eigen::VectorXd returns;

  Eigen::Index size() const { return actions.cols(); }
  void validate(const ActorCritic<S>& net) const;
};

struct UpdateMetrics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  double action_std = 0.0;
};

struct LossParts {
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double total = 0.0;
};

// Full PPO objective on the samples in `index` with its gradient w.r.t. the
// flat parameters. Exposed for gradient checks.
template <typename S>
LossParts ppo_loss(const ActorCritic<S>& net, const RolloutBatch<S>& batch, std::span<const Eigen::Index> index,
                   const PpoConfig& config, Vector<S>* grad);

// Epochs x minibatches of clipped-surrogate + value updates with global
// gradient-norm clipping. NonFiniteLoss restores the parameters and Adam state.
template <typename S>
UpdateMetrics ppo_update(ActorCritic<S>& net, nn::AdamState<S>& adam, const RolloutBatch<S>& batch,
                         const PpoConfig& config, Rng& rng);

// Scales `grad` so its norm is at most max_norm; returns the original norm.
template <typename S>
double clip_grad_norm(Vector<S>& grad, double max_norm);

}  // namespace palo::rl
