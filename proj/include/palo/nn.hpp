#pragma once

#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "palo/errors.hpp"
#include "palo/rng.hpp"

namespace palo::nn {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

enum class Activation { kElu, kTanh, kRelu, kIdentity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

template <typename S>
Matrix<S> activate(Activation a, const Matrix<S>& z);
template <typename S>
Matrix<S> activate_grad(Activation a, const Matrix<S>& z);
template <typename S>
Matrix<S> activate_grad2(Activation a, const Matrix<S>& z);

// Fully connected network. Samples are columns: forward maps (in x batch) to
// (out x batch). All weights and biases live in one flat parameter vector.
template <typename S>
class Mlp {
 public:
  struct Cache {
    std::vector<Matrix<S>> inputs;  // input to each layer
    std::vector<Matrix<S>> pre;     // pre-activations
  };

  Mlp() = default;
  Mlp(std::vector<int> widths, Activation hidden, Activation output = Activation::kIdentity);

  // Orthogonal initialization; the last layer is scaled by `output_gain`.
  void init(Rng& rng, double hidden_gain = std::sqrt(2.0), double output_gain = 1.0);

  int input_dim() const { return widths_.front(); }
  int output_dim() const { return widths_.back(); }
  int num_layers() const { return static_cast<int>(widths_.size()) - 1; }
  Eigen::Index param_count() const { return params_.size(); }
  const std::vector<int>& widths() const { return widths_; }
  Activation hidden_activation() const { return hidden_; }
  Activation output_activation() const { return output_; }

  Vector<S>& params() { return params_; }
  const Vector<S>& params() const { return params_; }

  Eigen::Map<Matrix<S>> weight(int l) {
    return {params_.data() + w_off_[l], widths_[l + 1], widths_[l]};
  }
  Eigen::Map<const Matrix<S>> weight(int l) const {
    return {params_.data() + w_off_[l], widths_[l + 1], widths_[l]};
  }
  Eigen::Map<Vector<S>> bias(int l) { return {params_.data() + b_off_[l], widths_[l + 1]}; }
  Eigen::Map<const Vector<S>> bias(int l) const { return {params_.data() + b_off_[l], widths_[l + 1]}; }

  Matrix<S> forward(const Matrix<S>& x, Cache* cache = nullptr) const;

  // Accumulates parameter gradients into `grad` and returns dL/dx.
  Matrix<S> backward(const Cache& cache, const Matrix<S>& dy, Vector<S>& grad) const;

  // d(output)/d(input) per sample for a scalar-output network (in x batch).
  Matrix<S> input_gradient(const Cache& cache) const;

  // Adds d/dparams of scale * sum_n |d(output_n)/d(x_n)|^2 to `grad` and returns
  // that penalty value. Requires a scalar, identity-output network.
  S input_gradient_penalty(const Cache& cache, S scale, Vector<S>& grad) const;

  template <typename T>
  Mlp<T> cast() const {
    Mlp<T> out(widths_, hidden_, output_);
    out.params() = params_.template cast<T>();
    return out;
  }

 private:
  Activation layer_activation(int l) const { return l + 1 == num_layers() ? output_ : hidden_; }

  std::vector<int> widths_;
  Activation hidden_ = Activation::kElu;
  Activation output_ = Activation::kIdentity;
  std::vector<Eigen::Index> w_off_;
  std::vector<Eigen::Index> b_off_;
  Vector<S> params_;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename S>
struct AdamState {
  Vector<S> m;
  Vector<S> v;
  long step = 0;
  AdamConfig config;

  AdamState() = default;
  AdamState(Eigen::Index n, AdamConfig cfg) : m(Vector<S>::Zero(n)), v(Vector<S>::Zero(n)), config(cfg) {}
};

// Bias-corrected Adam update of `params` in place.
template <typename S>
void adam_step(Vector<S>& params, const Vector<S>& grad, AdamState<S>& state) {
  if (params.size() != grad.size() || params.size() != state.m.size()) {
    throw ShapeMismatch("adam_step: parameter, gradient and moment sizes differ");
  }
  const AdamConfig& c = state.config;
  ++state.step;
  state.m = S(c.beta1) * state.m + S(1.0 - c.beta1) * grad;
  state.v = S(c.beta2) * state.v + S(1.0 - c.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const S step_size = S(c.lr / bc1);
  const S inv_sqrt_bc2 = S(1.0 / std::sqrt(bc2));
  params.array() -= step_size * state.m.array() / (state.v.array().sqrt() * inv_sqrt_bc2 + S(c.eps));
}

// Diagonal Gaussian policy head.
inline constexpr double kLogStdMin = -4.0;
inline constexpr double kLogStdMax = 1.0;

template <typename S>
Vector<S> clamp_log_std(const Vector<S>& log_std) {
  return log_std.cwiseMax(S(kLogStdMin)).cwiseMin(S(kLogStdMax));
}

// Log density per sample (row vector of length batch).
template <typename S>
Eigen::Matrix<S, 1, Eigen::Dynamic> gaussian_log_prob(const Matrix<S>& mu, const Vector<S>& log_std,
                                                      const Matrix<S>& action) {
  const Vector<S> ls = clamp_log_std(log_std);
  const Vector<S> inv_var = (S(-2) * ls).array().exp();
  const Matrix<S> diff = action - mu;
  const S constant = -ls.sum() - S(0.5 * std::log(2.0 * std::numbers::pi)) * static_cast<S>(mu.rows());
  Eigen::Matrix<S, 1, Eigen::Dynamic> out =
      (S(-0.5) * (diff.array().square().colwise() * inv_var.array())).colwise().sum();
  out.array() += constant;
  return out;
}

template <typename S>
S gaussian_entropy(const Vector<S>& log_std) {
  const Vector<S> ls = clamp_log_std(log_std);
  return ls.sum() + S(0.5 * (1.0 + std::log(2.0 * std::numbers::pi))) * static_cast<S>(ls.size());
}

template <typename S>
struct GaussianSample {
  Matrix<S> action;
  Eigen::Matrix<S, 1, Eigen::Dynamic> log_prob;
};

// Deterministic mode returns mu itself.
template <typename S>
GaussianSample<S> gaussian_policy(const Matrix<S>& mu, const Vector<S>& log_std, Rng* rng, bool deterministic) {
  GaussianSample<S> out;
  if (deterministic || rng == nullptr) {
    out.action = mu;
  } else {
    const Vector<S> std_dev = clamp_log_std(log_std).array().exp();
    out.action.resize(mu.rows(), mu.cols());
    for (Eigen::Index c = 0; c < mu.cols(); ++c) {
      for (Eigen::Index r = 0; r < mu.rows(); ++r) {
        out.action(r, c) = mu(r, c) + std_dev[r] * static_cast<S>(rng->normal());
      }
    }
  }
  out.log_prob = gaussian_log_prob<S>(mu, log_std, out.action);
  return out;
}

}  // namespace palo::nn
