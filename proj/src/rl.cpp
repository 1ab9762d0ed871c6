#include "palo/rl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "palo/errors.hpp"

namespace palo::rl {

namespace {

std::vector<int> chain(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> w{in};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

template <typename S>
Matrix<S> gather(const Matrix<S>& m, std::span<const Eigen::Index> index) {
  Matrix<S> out(m.rows(), static_cast<Eigen::Index>(index.size()));
  for (std::size_t i = 0; i < index.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(index[i]);
  return out;
}

void check_gae_shapes(const Eigen::MatrixXd& rewards, const Eigen::MatrixXd& values, const Eigen::MatrixXd& dones,
                      const Eigen::VectorXd& last_values) {
  if (values.rows() != rewards.rows() || values.cols() != rewards.cols() || dones.rows() != rewards.rows() ||
      dones.cols() != rewards.cols() || last_values.size() != rewards.cols()) {
    throw LengthMismatch("gae: rewards, values, dones and bootstrap values are not aligned");
  }
}

void gae_column(const Eigen::MatrixXd& rewards, const Eigen::MatrixXd& values, const Eigen::MatrixXd& dones,
                const Eigen::VectorXd& last_values, double gamma, double lambda, Eigen::Index n, GaeResult& out) {
  double running = 0.0;
  for (Eigen::Index t = rewards.rows() - 1; t >= 0; --t) {
    const double next_value = t + 1 == rewards.rows() ? last_values[n] : values(t + 1, n);
    const double alive = 1.0 - dones(t, n);
    const double delta = rewards(t, n) + gamma * next_value * alive - values(t, n);
    running = delta + gamma * lambda * alive * running;
    out.advantages(t, n) = running;
    out.returns(t, n) = running + values(t, n);
  }
}

}  // namespace

template <typename S>
ActorCritic<S>::ActorCritic(const NetworkConfig& config)
    : encoder(chain(config.window_dim(), config.encoder_hidden, config.latent), nn::Activation::kElu),
      actor(chain(config.latent + kCommandDim, config.actor_hidden, env::kActionDim), nn::Activation::kElu),
      log_std(Vector<S>::Constant(env::kActionDim, static_cast<S>(config.init_log_std))),
      critic(chain(kCriticInputDim, config.critic_hidden, 1), nn::Activation::kElu),
      config_(config) {
  if (config.history < 1) throw ConfigError("history window must hold at least one step");
  if (config.latent < 1) throw ConfigError("latent width must be positive");
}

template <typename S>
void ActorCritic<S>::init(Rng& rng) {
  encoder.init(rng);
  actor.init(rng, std::sqrt(2.0), 0.01);
  critic.init(rng, std::sqrt(2.0), 1.0);
  log_std.setConstant(static_cast<S>(config_.init_log_std));
}

template <typename S>
Matrix<S> ActorCritic<S>::actor_forward(const Matrix<S>& window, const Matrix<S>& cmd, ActorCache* cache) const {
  if (window.rows() != config_.window_dim()) {
    throw ShapeMismatch("history window has " + std::to_string(window.rows()) + " rows, expected " +
                        std::to_string(config_.window_dim()));
  }
  if (cmd.rows() != kCommandDim || cmd.cols() != window.cols()) throw ShapeMismatch("command block has the wrong shape");
  const Matrix<S> latent = encoder.forward(window, cache ? &cache->encoder : nullptr);
  Matrix<S> in(config_.latent + kCommandDim, window.cols());
  in.topRows(config_.latent) = latent;
  in.bottomRows(kCommandDim) = cmd;
  return actor.forward(in, cache ? &cache->actor : nullptr);
}

template <typename S>
void ActorCritic<S>::actor_backward(const ActorCache& cache, const Matrix<S>& dmu, Vector<S>& grad) const {
  if (grad.size() != param_count()) grad = Vector<S>::Zero(param_count());
  Vector<S> g_actor = grad.segment(encoder.param_count(), actor.param_count());
  const Matrix<S> din = actor.backward(cache.actor, dmu, g_actor);
  grad.segment(encoder.param_count(), actor.param_count()) = g_actor;
  Vector<S> g_enc = grad.head(encoder.param_count());
  encoder.backward(cache.encoder, din.topRows(config_.latent), g_enc);
  grad.head(encoder.param_count()) = g_enc;
}

template <typename S>
Matrix<S> ActorCritic<S>::critic_forward(const Matrix<S>& critic_in, typename nn::Mlp<S>::Cache* cache) const {
  if (critic_in.rows() != kCriticInputDim) throw ShapeMismatch("critic input must have 96 rows");
  return critic.forward(critic_in, cache);
}

template <typename S>
Matrix<S> ActorCritic<S>::critic_forward(const Matrix<S>& proprio, const Matrix<S>& privileged,
                                         const Matrix<S>& cmd) const {
  if (proprio.rows() != env::kProprioDim) throw ShapeMismatch("proprio block must have 48 rows");
  if (privileged.rows() != env::kPrivilegedDim) throw ShapeMismatch("privileged block must have 42 rows");
  if (cmd.rows() != kCommandDim) throw ShapeMismatch("command block must have 6 rows");
  if (privileged.cols() != proprio.cols() || cmd.cols() != proprio.cols()) {
    throw ShapeMismatch("critic inputs disagree on batch size");
  }
  Matrix<S> in(kCriticInputDim, proprio.cols());
  in << proprio, privileged, cmd;
  return critic.forward(in);
}

template <typename S>
void ActorCritic<S>::critic_backward(const typename nn::Mlp<S>::Cache& cache, const Matrix<S>& dv,
                                     Vector<S>& grad) const {
  if (grad.size() != param_count()) grad = Vector<S>::Zero(param_count());
  Vector<S> g = grad.segment(critic_offset(), critic.param_count());
  critic.backward(cache, dv, g);
  grad.segment(critic_offset(), critic.param_count()) = g;
}

template <typename S>
Eigen::Index ActorCritic<S>::param_count() const {
  return critic_offset() + critic.param_count();
}

template <typename S>
Vector<S> ActorCritic<S>::flat_params() const {
  Vector<S> flat(param_count());
  flat << encoder.params(), actor.params(), log_std, critic.params();
  return flat;
}

template <typename S>
void ActorCritic<S>::set_flat_params(const Vector<S>& flat) {
  if (flat.size() != param_count()) throw ShapeMismatch("flat parameter vector has the wrong length");
  Eigen::Index o = 0;
  encoder.params() = flat.segment(o, encoder.param_count());
  o += encoder.param_count();
  actor.params() = flat.segment(o, actor.param_count());
  o += actor.param_count();
  log_std = flat.segment(o, log_std.size());
  o += log_std.size();
  critic.params() = flat.segment(o, critic.param_count());
}

void PpoConfig::validate() const {
  if (!(clip > 0.0 && clip < 1.0)) throw ConfigError("ppo.clip must lie in (0, 1)");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("ppo.gamma must lie in [0, 1)");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("ppo.lambda must lie in [0, 1]");
  if (epochs < 1 || minibatches < 1 || steps_per_env < 1) {
    throw ConfigError("ppo.epochs, ppo.minibatches and ppo.steps_per_env must be positive");
  }
  if (!(learning_rate > 0.0) || !(max_grad_norm > 0.0)) {
    throw ConfigError("ppo.learning_rate and ppo.max_grad_norm must be positive");
  }
}

GaeResult gae(const Eigen::MatrixXd& rewards, const Eigen::MatrixXd& values, const Eigen::MatrixXd& dones,
              const Eigen::VectorXd& last_values, double gamma, double lambda) {
  check_gae_shapes(rewards, values, dones, last_values);
  GaeResult out{Eigen::MatrixXd(rewards.rows(), rewards.cols()), Eigen::MatrixXd(rewards.rows(), rewards.cols())};
  for (Eigen::Index n = 0; n < rewards.cols(); ++n) gae_column(rewards, values, dones, last_values, gamma, lambda, n, out);
  return out;
}

GaeResult gae_parallel(const Eigen::MatrixXd& rewards, const Eigen::MatrixXd& values, const Eigen::MatrixXd& dones,
                       const Eigen::VectorXd& last_values, double gamma, double lambda) {
  check_gae_shapes(rewards, values, dones, last_values);
  GaeResult out{Eigen::MatrixXd(rewards.rows(), rewards.cols()), Eigen::MatrixXd(rewards.rows(), rewards.cols())};
  const auto cols = static_cast<long>(rewards.cols());
#pragma omp parallel for schedule(static)
  for (long n = 0; n < cols; ++n) gae_column(rewards, values, dones, last_values, gamma, lambda, n, out);
  return out;
}

void normalize_advantages(Eigen::Ref<Eigen::VectorXd> a) {
  if (a.size() == 0) return;
  const double mean = a.mean();
  a.array() -= mean;
  const double var = a.size() > 1 ? a.squaredNorm() / static_cast<double>(a.size() - 1) : 0.0;
  a /= std::sqrt(var) + 1e-8;
}

PolicyLoss ppo_policy_loss(std::span<const double> lp_new, std::span<const double> lp_old,
                           std::span<const double> adv, double eps) {
  if (lp_new.size() != lp_old.size() || lp_new.size() != adv.size()) {
    throw LengthMismatch("ppo_policy_loss: inputs are not aligned");
  }
  PolicyLoss out;
  const auto n = lp_new.size();
  out.grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  if (n == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n);
  double clipped_count = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ratio = std::exp(lp_new[i] - lp_old[i]);
    const double unclipped = ratio * adv[i];
    const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * adv[i];
    if (clipped < unclipped) {
      // the clipped branch is constant in the new log-probability
      out.loss -= clipped * inv_n;
    } else {
      out.loss -= unclipped * inv_n;
      out.grad[static_cast<Eigen::Index>(i)] = -unclipped * inv_n;
    }
    if (std::abs(ratio - 1.0) > eps) clipped_count += 1.0;
  }
  out.clip_fraction = clipped_count * inv_n;
  return out;
}

double value_loss(std::span<const double> values, std::span<const double> returns, Eigen::VectorXd* grad) {
  if (values.size() != returns.size()) throw LengthMismatch("value_loss: inputs are not aligned");
  const auto n = values.size();
  if (grad) *grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  if (n == 0) return 0.0;
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = values[i] - returns[i];
    loss += 0.5 * r * r;
    if (grad) (*grad)[static_cast<Eigen::Index>(i)] = r / static_cast<double>(n);
  }
  return loss / static_cast<double>(n);
}

template <typename S>
void RolloutBatch<S>::validate(const ActorCritic<S>& net) const {
  const Eigen::Index m = size();
  if (window.rows() != net.config().window_dim() || window.cols() != m) throw ShapeMismatch("batch window shape");
  if (command.rows() != kCommandDim || command.cols() != m) throw ShapeMismatch("batch command shape");
  if (critic_in.rows() != kCriticInputDim || critic_in.cols() != m) throw ShapeMismatch("batch critic input shape");
  if (actions.rows() != env::kActionDim) throw ShapeMismatch("batch action shape");
  if (log_prob.size() != m || values.size() != m || advantages.size() != m || returns.size() != m) {
    throw LengthMismatch("batch per-sample vectors are not aligned");
  }
}

template <typename S>
LossParts ppo_loss(const ActorCritic<S>& net, const RolloutBatch<S>& batch, std::span<const Eigen::Index> index,
                   const PpoConfig& config, Vector<S>* grad) {
  const auto m = static_cast<Eigen::Index>(index.size());
  typename ActorCritic<S>::ActorCache acache;
  typename nn::Mlp<S>::Cache ccache;
  const Matrix<S> actions = gather(batch.actions, index);
  const Matrix<S> mu = net.actor_forward(gather(batch.window, index), gather(batch.command, index), &acache);
  const Matrix<S> values = net.critic_forward(gather(batch.critic_in, index), &ccache);

  const Row<S> lp = nn::gaussian_log_prob<S>(mu, net.log_std, actions);
  Eigen::VectorXd lp_new(m), lp_old(m), adv(m), ret(m), v(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    lp_new[i] = static_cast<double>(lp[i]);
    lp_old[i] = batch.log_prob[index[i]];
    adv[i] = batch.advantages[index[i]];
    ret[i] = batch.returns[index[i]];
    v[i] = static_cast<double>(values(0, i));
  }
  const PolicyLoss pl = ppo_policy_loss({lp_new.data(), static_cast<std::size_t>(m)},
                                        {lp_old.data(), static_cast<std::size_t>(m)},
                                        {adv.data(), static_cast<std::size_t>(m)}, config.clip);
  Eigen::VectorXd dv;
  const double vl = value_loss({v.data(), static_cast<std::size_t>(m)}, {ret.data(), static_cast<std::size_t>(m)}, &dv);
  const double entropy = static_cast<double>(nn::gaussian_entropy<S>(net.log_std));

  LossParts parts;
  parts.policy = pl.loss;
  parts.value = vl;
  parts.entropy = entropy;
  parts.clip_fraction = pl.clip_fraction;
  double kl = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double log_ratio = lp_new[i] - lp_old[i];
    kl += std::exp(log_ratio) - 1.0 - log_ratio;
  }
  parts.approx_kl = m > 0 ? kl / static_cast<double>(m) : 0.0;
  parts.total = pl.loss - config.entropy_coef * entropy + config.value_coef * vl;
  if (!grad) return parts;

  if (grad->size() != net.param_count()) *grad = Vector<S>::Zero(net.param_count());
  const Vector<S> ls = nn::clamp_log_std<S>(net.log_std);
  const Vector<S> inv_var = (S(-2) * ls).array().exp();
  const Matrix<S> diff = actions - mu;
  Matrix<S> dmu = diff.array().colwise() * inv_var.array();
  Vector<S> dlog_std = Vector<S>::Zero(ls.size());
  for (Eigen::Index i = 0; i < m; ++i) {
    const S g = static_cast<S>(pl.grad[i]);
    dmu.col(i) *= g;
    dlog_std.array() += g * ((diff.col(i).array().square() * inv_var.array()) - S(1));
  }
  dlog_std.array() -= static_cast<S>(config.entropy_coef);
  for (Eigen::Index j = 0; j < ls.size(); ++j) {
    if (net.log_std[j] < S(nn::kLogStdMin) || net.log_std[j] > S(nn::kLogStdMax)) dlog_std[j] = S(0);
  }
  net.actor_backward(acache, dmu, *grad);
  grad->segment(net.log_std_offset(), ls.size()) += dlog_std;
  Matrix<S> dvalues(1, m);
  for (Eigen::Index i = 0; i < m; ++i) dvalues(0, i) = static_cast<S>(config.value_coef * dv[i]);
  net.critic_backward(ccache, dvalues, *grad);
  return parts;
}

template <typename S>
double clip_grad_norm(Vector<S>& grad, double max_norm) {
  const double norm = std::sqrt(static_cast<double>(grad.template cast<double>().squaredNorm()));
  if (norm > max_norm && norm > 0.0) grad *= static_cast<S>(max_norm / norm);
  return norm;
}

template <typename S>
UpdateMetrics ppo_update(ActorCritic<S>& net, nn::AdamState<S>& adam, const RolloutBatch<S>& batch,
                         const PpoConfig& config, Rng& rng) {
  batch.validate(net);
  const Eigen::Index m = batch.size();
  if (m == 0) throw LengthMismatch("ppo_update: empty batch");
  if (adam.m.size() != net.param_count()) adam = nn::AdamState<S>(net.param_count(), adam.config);
  adam.config.lr = config.learning_rate;

  const Vector<S> saved_params = net.flat_params();
  const nn::AdamState<S> saved_adam = adam;
  auto restore = [&] {
    net.set_flat_params(saved_params);
    adam = saved_adam;
  };

  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  UpdateMetrics metrics;
  int count = 0;
  Vector<S> grad(net.param_count());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    for (int b = 0; b < config.minibatches; ++b) {
      const auto lo = static_cast<std::size_t>(m * b / config.minibatches);
      const auto hi = static_cast<std::size_t>(m * (b + 1) / config.minibatches);
      if (hi == lo) continue;
      grad.setZero();
      const LossParts parts = ppo_loss<S>(net, batch, std::span(order).subspan(lo, hi - lo), config, &grad);
      if (!std::isfinite(parts.total) || !grad.allFinite()) {
        restore();
        throw NonFiniteLoss("non-finite PPO loss or gradient in epoch " + std::to_string(epoch));
      }
      metrics.grad_norm += clip_grad_norm<S>(grad, config.max_grad_norm);
      Vector<S> params = net.flat_params();
      nn::adam_step<S>(params, grad, adam);
      net.set_flat_params(params);
      metrics.policy_loss += parts.policy;
      metrics.value_loss += parts.value;
      metrics.entropy += parts.entropy;
      metrics.approx_kl += parts.approx_kl;
      metrics.clip_fraction += parts.clip_fraction;
      ++count;
    }
  }
  if (!net.flat_params().allFinite()) {
    restore();
    throw NonFiniteLoss("PPO step produced non-finite parameters");
  }
  const double inv = 1.0 / std::max(count, 1);
  metrics.policy_loss *= inv;
  metrics.value_loss *= inv;
  metrics.entropy *= inv;
  metrics.approx_kl *= inv;
  metrics.clip_fraction *= inv;
  metrics.grad_norm *= inv;
  metrics.action_std = static_cast<double>(nn::clamp_log_std<S>(net.log_std).array().exp().mean());
  return metrics;
}

template class ActorCritic<float>;
template class ActorCritic<double>;
template struct RolloutBatch<float>;
template struct RolloutBatch<double>;
template LossParts ppo_loss<float>(const ActorCritic<float>&, const RolloutBatch<float>&,
                                   std::span<const Eigen::Index>, const PpoConfig&, Vector<float>*);
template LossParts ppo_loss<double>(const ActorCritic<double>&, const RolloutBatch<double>&,
                                    std::span<const Eigen::Index>, const PpoConfig&, Vector<double>*);
template UpdateMetrics ppo_update<float>(ActorCritic<float>&, nn::AdamState<float>&, const RolloutBatch<float>&,
                                         const PpoConfig&, Rng&);
template UpdateMetrics ppo_update<double>(ActorCritic<double>&, nn::AdamState<double>&, const RolloutBatch<double>&,
                                          const PpoConfig&, Rng&);
template double clip_grad_norm<float>(Vector<float>&, double);
template double clip_grad_norm<double>(Vector<double>&, double);

}  // namespace palo::rl
