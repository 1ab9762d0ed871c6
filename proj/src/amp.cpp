#include "palo/amp.hpp"

#include <cmath>

#include "palo/archive.hpp"
#include "palo/errors.hpp"

namespace palo::amp {

double style_reward(double d) { return std::max(0.0, 1.0 - 0.25 * (d - 1.0) * (d - 1.0)); }

ExpertDataset ExpertDataset::from_pairs(Eigen::MatrixXd pairs, std::vector<std::int64_t> episode,
                                        nlohmann::json metadata, Eigen::Index min_pairs) {
  if (pairs.rows() != kPairDim) throw ShapeMismatch("expert pairs must have 86 rows");
  if (pairs.cols() == 0 || pairs.cols() < min_pairs) {
    throw ConfigError("expert dataset needs at least " + std::to_string(min_pairs) + " pairs, got " +
                      std::to_string(pairs.cols()));
  }
  if (!episode.empty() && static_cast<Eigen::Index>(episode.size()) != pairs.cols()) {
    throw LengthMismatch("episode ids do not match the pair count");
  }
  ExpertDataset d;
  d.features = std::move(pairs);
  d.episode = std::move(episode);
  d.metadata = std::move(metadata);
  const double n = static_cast<double>(d.features.cols());
  d.mean = d.features.rowwise().mean();
  d.std = ((d.features.colwise() - d.mean).array().square().rowwise().sum() / n).sqrt();
  d.std = d.std.cwiseMax(kStdFloor);
  return d;
}

Eigen::MatrixXd ExpertDataset::normalize(const Eigen::MatrixXd& raw) const {
  if (raw.rows() != kPairDim) throw ShapeMismatch("AMP features must have 86 rows");
  return (raw.colwise() - mean).array().colwise() / std.array();
}

void ExpertDataset::save(const std::string& path) const {
  io::TensorArchive a("amp_dataset", metadata.value("policy_digest", std::string{}));
  a.meta() = metadata;
  a.put<double>("features", features);
  a.put<double>("mean", mean);
  a.put<double>("std", std);
  a.put<std::int64_t>("episode", episode);
  a.save(path);
}

ExpertDataset ExpertDataset::load(const std::string& path) {
  const io::TensorArchive a = io::TensorArchive::load(path);
  if (a.kind() != "amp_dataset") throw FormatError("'" + path + "' is a " + a.kind() + ", not an AMP dataset");
  ExpertDataset d;
  d.features = a.matrix<double>("features");
  d.mean = a.vector<double>("mean");
  d.std = a.vector<double>("std");
  d.episode = a.list<std::int64_t>("episode");
  d.metadata = a.meta();
  if (d.features.rows() != kPairDim || d.mean.size() != kPairDim || d.std.size() != kPairDim) {
    throw FormatError("AMP dataset has the wrong feature width");
  }
  return d;
}

template <typename S>
nn::Mlp<S> make_discriminator(const std::vector<int>& hidden) {
  std::vector<int> widths{kPairDim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(1);
  return nn::Mlp<S>(widths, nn::Activation::kElu, nn::Activation::kIdentity);
}

template <typename S>
AmpMetrics amp_loss(const nn::Mlp<S>& disc, const nn::Matrix<S>& expert, const nn::Matrix<S>& policy,
                    double gp_weight, nn::Vector<S>* grad) {
  if (expert.cols() == 0 || policy.cols() == 0) throw LengthMismatch("amp_loss: empty batch");
  typename nn::Mlp<S>::Cache ce;
  typename nn::Mlp<S>::Cache cp;
  const nn::Matrix<S> de = disc.forward(expert, &ce);
  const nn::Matrix<S> dp = disc.forward(policy, &cp);
  const double ne = static_cast<double>(expert.cols());
  const double np = static_cast<double>(policy.cols());

  AmpMetrics m;
  for (Eigen::Index i = 0; i < de.cols(); ++i) {
    const double d = static_cast<double>(de(0, i));
    m.expert_loss += (d - 1.0) * (d - 1.0) / ne;
    m.d_expert += d / ne;
    m.expert_acc += (d > 0.0 ? 1.0 : 0.0) / ne;
  }
  for (Eigen::Index i = 0; i < dp.cols(); ++i) {
    const double d = static_cast<double>(dp(0, i));
    m.policy_loss += (d + 1.0) * (d + 1.0) / np;
    m.d_policy += d / np;
    m.policy_acc += (d < 0.0 ? 1.0 : 0.0) / np;
  }
  const S gp_scale = static_cast<S>(0.5 * gp_weight / ne);
  if (grad) {
    if (grad->size() != disc.param_count()) *grad = nn::Vector<S>::Zero(disc.param_count());
    disc.backward(ce, (de.array() - S(1)) * static_cast<S>(2.0 / ne), *grad);
    disc.backward(cp, (dp.array() + S(1)) * static_cast<S>(2.0 / np), *grad);
    m.grad_penalty = static_cast<double>(disc.input_gradient_penalty(ce, gp_scale, *grad));
  } else {
    m.grad_penalty = static_cast<double>(gp_scale) * static_cast<double>(disc.input_gradient(ce).squaredNorm());
  }
  m.loss = m.expert_loss + m.policy_loss + m.grad_penalty;
  return m;
}

template <typename S>
AmpMetrics amp_update(nn::Mlp<S>& disc, nn::AdamState<S>& adam, const nn::Matrix<S>& expert,
                      const nn::Matrix<S>& policy, double gp_weight) {
  if (adam.m.size() != disc.param_count()) adam = nn::AdamState<S>(disc.param_count(), adam.config);
  nn::Vector<S> grad = nn::Vector<S>::Zero(disc.param_count());
  const AmpMetrics m = amp_loss<S>(disc, expert, policy, gp_weight, &grad);
  if (!std::isfinite(m.loss) || !grad.allFinite()) throw NonFiniteLoss("non-finite discriminator loss");
  const nn::Vector<S> saved = disc.params();
  const nn::AdamState<S> saved_adam = adam;
  nn::adam_step<S>(disc.params(), grad, adam);
  if (!disc.params().allFinite()) {
    disc.params() = saved;
    adam = saved_adam;
    throw NonFiniteLoss("discriminator step produced non-finite parameters");
  }
  return m;
}

template <typename S>
Eigen::VectorXd style_rewards_for_batch(const nn::Mlp<S>& disc, const ExpertDataset& stats,
                                        const Eigen::MatrixXd& raw_pairs) {
  const nn::Matrix<S> x = stats.normalize(raw_pairs).template cast<S>();
  const nn::Matrix<S> d = disc.forward(x);
  Eigen::VectorXd r(d.cols());
  for (Eigen::Index i = 0; i < d.cols(); ++i) r[i] = style_reward(static_cast<double>(d(0, i)));
  return r;
}

Eigen::MatrixXd sample_columns(const Eigen::MatrixXd& m, int count, Rng& rng) {
  if (m.cols() == 0) throw LengthMismatch("cannot sample from an empty matrix");
  Eigen::MatrixXd out(m.rows(), count);
  for (int i = 0; i < count; ++i) out.col(i) = m.col(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(m.cols()))));
  return out;
}

ExpertDataset collect_expert_dataset(const rl::ActorCritic<float>& policy, rollout::VecEnv& envs,
                                     const CollectOptions& options) {
  if (options.pairs <= 0 || options.pairs < options.min_pairs) {
    throw ConfigError("expert dataset needs at least " + std::to_string(std::max<Eigen::Index>(options.min_pairs, 1)) +
                      " pairs, requested " + std::to_string(options.pairs));
  }
  const int n = envs.size();
  const Eigen::Index steps = (options.pairs + n - 1) / n;
  std::vector<std::vector<Eigen::VectorXd>> per_env(static_cast<std::size_t>(n));
  std::vector<std::vector<std::int64_t>> per_env_episode(static_cast<std::size_t>(n));
  std::vector<std::int64_t> episode_of(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) episode_of[static_cast<std::size_t>(i)] = i;
  std::int64_t next_episode = n;
  double r_v_sum = 0.0;

  envs.reset_all();
  for (Eigen::Index t = 0; t < steps; ++t) {
    const Eigen::MatrixXf mu = policy.actor_forward(envs.windows<float>(), envs.commands<float>());
    const rollout::StepBatch b = envs.step(mu.cast<double>());
    r_v_sum += b.r_v.sum();
    for (int i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      per_env[k].push_back(b.amp_pairs.col(i));
      per_env_episode[k].push_back(episode_of[k]);
      if (b.done[i] > 0.5) episode_of[k] = next_episode++;
    }
  }
  const double mean_r_v = r_v_sum / static_cast<double>(steps * n);
  if (mean_r_v < options.gate) {
    throw PolicyTooWeak("expert policy tracks velocity with mean reward " + std::to_string(mean_r_v) +
                        ", below the gate of " + std::to_string(options.gate));
  }
  Eigen::MatrixXd pairs(kPairDim, options.pairs);
  std::vector<std::int64_t> episode;
  episode.reserve(static_cast<std::size_t>(options.pairs));
  Eigen::Index c = 0;
  for (int i = 0; i < n && c < options.pairs; ++i) {
    const auto k = static_cast<std::size_t>(i);
    for (std::size_t t = 0; t < per_env[k].size() && c < options.pairs; ++t, ++c) {
      pairs.col(c) = per_env[k][t];
      episode.push_back(per_env_episode[k][t]);
    }
  }
  nlohmann::json meta = {{"policy_digest", options.policy_digest},
                         {"seed", envs.config().seed},
                         {"num_envs", n},
                         {"mean_r_v", mean_r_v}};
  return ExpertDataset::from_pairs(std::move(pairs), std::move(episode), std::move(meta), options.min_pairs);
}

template nn::Mlp<float> make_discriminator<float>(const std::vector<int>&);
template nn::Mlp<double> make_discriminator<double>(const std::vector<int>&);
template AmpMetrics amp_loss<float>(const nn::Mlp<float>&, const nn::Matrix<float>&, const nn::Matrix<float>&,
                                    double, nn::Vector<float>*);
template AmpMetrics amp_loss<double>(const nn::Mlp<double>&, const nn::Matrix<double>&, const nn::Matrix<double>&,
                                     double, nn::Vector<double>*);
template AmpMetrics amp_update<float>(nn::Mlp<float>&, nn::AdamState<float>&, const nn::Matrix<float>&,
                                      const nn::Matrix<float>&, double);
template AmpMetrics amp_update<double>(nn::Mlp<double>&, nn::AdamState<double>&, const nn::Matrix<double>&,
                                       const nn::Matrix<double>&, double);
template Eigen::VectorXd style_rewards_for_batch<float>(const nn::Mlp<float>&, const ExpertDataset&,
                                                        const Eigen::MatrixXd&);
template Eigen::VectorXd style_rewards_for_batch<double>(const nn::Mlp<double>&, const ExpertDataset&,
                                                         const Eigen::MatrixXd&);

}  // namespace palo::amp
