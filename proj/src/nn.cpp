#include "palo/nn.hpp"

#include <Eigen/QR>

namespace palo::nn {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kElu: return "elu";
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kIdentity: return "identity";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "elu") return Activation::kElu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  if (name == "identity") return Activation::kIdentity;
  throw ConfigError("unknown activation '" + name + "'");
}

template <typename S>
Matrix<S> activate(Activation a, const Matrix<S>& z) {
  switch (a) {
    case Activation::kElu: return (z.array() > S(0)).select(z, z.array().exp() - S(1));
    case Activation::kTanh: return z.array().tanh();
    case Activation::kRelu: return z.cwiseMax(S(0));
    case Activation::kIdentity: return z;
  }
  return z;
}

template <typename S>
Matrix<S> activate_grad(Activation a, const Matrix<S>& z) {
  switch (a) {
    case Activation::kElu: return (z.array() > S(0)).select(Matrix<S>::Ones(z.rows(), z.cols()), z.array().exp());
    case Activation::kTanh: return S(1) - z.array().tanh().square();
    case Activation::kRelu: return (z.array() > S(0)).template cast<S>();
    case Activation::kIdentity: return Matrix<S>::Ones(z.rows(), z.cols());
  }
  return Matrix<S>::Ones(z.rows(), z.cols());
}

template <typename S>
Matrix<S> activate_grad2(Activation a, const Matrix<S>& z) {
  switch (a) {
    case Activation::kElu: return (z.array() > S(0)).select(Matrix<S>::Zero(z.rows(), z.cols()), z.array().exp());
    case Activation::kTanh: {
      const auto t = z.array().tanh();
      return S(-2) * t * (S(1) - t.square());
    }
    case Activation::kRelu:
    case Activation::kIdentity: return Matrix<S>::Zero(z.rows(), z.cols());
  }
  return Matrix<S>::Zero(z.rows(), z.cols());
}

template <typename S>
Mlp<S>::Mlp(std::vector<int> widths, Activation hidden, Activation output)
    : widths_(std::move(widths)), hidden_(hidden), output_(output) {
  if (widths_.size() < 2) throw ShapeMismatch("an MLP needs at least an input and an output width");
  Eigen::Index offset = 0;
  for (int l = 0; l < num_layers(); ++l) {
    if (widths_[l] <= 0 || widths_[l + 1] <= 0) throw ShapeMismatch("MLP widths must be positive");
    w_off_.push_back(offset);
    offset += static_cast<Eigen::Index>(widths_[l]) * widths_[l + 1];
    b_off_.push_back(offset);
    offset += widths_[l + 1];
  }
  params_ = Vector<S>::Zero(offset);
}

template <typename S>
void Mlp<S>::init(Rng& rng, double hidden_gain, double output_gain) {
  for (int l = 0; l < num_layers(); ++l) {
    const int rows = widths_[l + 1];
    const int cols = widths_[l];
    const int big = std::max(rows, cols);
    const int small = std::min(rows, cols);
    Eigen::MatrixXd g(big, small);
    for (int i = 0; i < big; ++i) {
      for (int j = 0; j < small; ++j) g(i, j) = rng.normal();
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
    // sign fix makes the decomposition unique
    const Eigen::MatrixXd r = qr.matrixQR().topLeftCorner(small, small);
    for (int j = 0; j < small; ++j) {
      if (r(j, j) < 0.0) q.col(j) *= -1.0;
    }
    const double gain = (l + 1 == num_layers()) ? output_gain : hidden_gain;
    Eigen::MatrixXd w = rows >= cols ? Eigen::MatrixXd(q) : Eigen::MatrixXd(q.transpose());
    weight(l) = (gain * w).cast<S>();
    bias(l).setZero();
  }
}

template <typename S>
Matrix<S> Mlp<S>::forward(const Matrix<S>& x, Cache* cache) const {
  if (x.rows() != input_dim()) {
    throw ShapeMismatch("MLP input has " + std::to_string(x.rows()) + " rows, expected " +
                        std::to_string(input_dim()));
  }
  if (cache) {
    cache->inputs.resize(num_layers());
    cache->pre.resize(num_layers());
  }
  Matrix<S> a = x;
  for (int l = 0; l < num_layers(); ++l) {
    Matrix<S> z = weight(l) * a;
    z.colwise() += bias(l);
    Matrix<S> next = activate<S>(layer_activation(l), z);
    if (cache) {
      cache->inputs[l] = std::move(a);
      cache->pre[l] = std::move(z);
    }
    a = std::move(next);
  }
  return a;
}

template <typename S>
Matrix<S> Mlp<S>::backward(const Cache& cache, const Matrix<S>& dy, Vector<S>& grad) const {
  if (static_cast<int>(cache.pre.size()) != num_layers()) throw ShapeMismatch("MLP cache does not match network");
  if (dy.rows() != output_dim() || dy.cols() != cache.pre.back().cols()) {
    throw ShapeMismatch("MLP output gradient has the wrong shape");
  }
  if (grad.size() != param_count()) grad = Vector<S>::Zero(param_count());
  Matrix<S> delta = dy.cwiseProduct(activate_grad<S>(layer_activation(num_layers() - 1), cache.pre.back()));
  for (int l = num_layers() - 1; l >= 0; --l) {
    Eigen::Map<Matrix<S>> gw(grad.data() + w_off_[l], widths_[l + 1], widths_[l]);
    Eigen::Map<Vector<S>> gb(grad.data() + b_off_[l], widths_[l + 1]);
    gw.noalias() += delta * cache.inputs[l].transpose();
    gb += delta.rowwise().sum();
    Matrix<S> da = weight(l).transpose() * delta;
    if (l == 0) return da;
    delta = da.cwiseProduct(activate_grad<S>(layer_activation(l - 1), cache.pre[l - 1]));
  }
  return {};
}

template <typename S>
Matrix<S> Mlp<S>::input_gradient(const Cache& cache) const {
  if (output_dim() != 1) throw ShapeMismatch("input_gradient needs a scalar-output network");
  const Eigen::Index batch = cache.pre.back().cols();
  Matrix<S> g = Matrix<S>::Ones(1, batch).cwiseProduct(
      activate_grad<S>(output_, cache.pre.back()));
  for (int l = num_layers() - 1; l >= 0; --l) {
    Matrix<S> gi = weight(l).transpose() * g;
    if (l == 0) return gi;
    g = gi.cwiseProduct(activate_grad<S>(hidden_, cache.pre[l - 1]));
  }
  return {};
}

template <typename S>
S Mlp<S>::input_gradient_penalty(const Cache& cache, S scale, Vector<S>& grad) const {
  if (output_dim() != 1 || output_ != Activation::kIdentity) {
    throw ShapeMismatch("gradient penalty needs a scalar network with identity output");
  }
  if (grad.size() != param_count()) grad = Vector<S>::Zero(param_count());
  const int L = num_layers();
  const Eigen::Index batch = cache.pre.back().cols();

  // Input-gradient pass. g[l] = d out / d a_l (a_0 = x); delta[l] = d out / d z_l
  // for hidden layers l = 0..L-2 (0-based layer indices).
  std::vector<Matrix<S>> g(L);
  std::vector<Matrix<S>> delta(L);
  std::vector<Matrix<S>> fprime(L);
  g[L - 1] = weight(L - 1).transpose() * Matrix<S>::Ones(1, batch);
  for (int l = L - 2; l >= 0; --l) {
    fprime[l] = activate_grad<S>(hidden_, cache.pre[l]);
    delta[l] = g[l + 1].cwiseProduct(fprime[l]);
    g[l] = weight(l).transpose() * delta[l];
  }
  // g[l] here indexes the gradient w.r.t. the input of layer l.
  const S value = scale * g[0].squaredNorm();

  // Reverse through the input-gradient pass.
  std::vector<Matrix<S>> zbar(L);
  Matrix<S> gbar = S(2) * scale * g[0];
  for (int l = 0; l <= L - 2; ++l) {
    Eigen::Map<Matrix<S>> gw(grad.data() + w_off_[l], widths_[l + 1], widths_[l]);
    gw.noalias() += delta[l] * gbar.transpose();
    const Matrix<S> dbar = weight(l) * gbar;
    zbar[l] = dbar.cwiseProduct(g[l + 1]).cwiseProduct(activate_grad2<S>(hidden_, cache.pre[l]));
    gbar = dbar.cwiseProduct(fprime[l]);
  }
  {
    Eigen::Map<Matrix<S>> gw(grad.data() + w_off_[L - 1], widths_[L], widths_[L - 1]);
    gw.noalias() += Matrix<S>::Ones(1, batch) * gbar.transpose();
  }

  // Reverse through the forward pass; the output pre-activation does not
  // influence the penalty.
  Matrix<S> abar;
  for (int l = L - 2; l >= 0; --l) {
    Matrix<S> zb = zbar[l];
    if (abar.size() > 0) zb += abar.cwiseProduct(fprime[l]);
    Eigen::Map<Matrix<S>> gw(grad.data() + w_off_[l], widths_[l + 1], widths_[l]);
    Eigen::Map<Vector<S>> gb(grad.data() + b_off_[l], widths_[l + 1]);
    gw.noalias() += zb * cache.inputs[l].transpose();
    gb += zb.rowwise().sum();
    if (l > 0) abar = weight(l).transpose() * zb;
  }
  return value;
}

template class Mlp<float>;
template class Mlp<double>;
template Matrix<float> activate<float>(Activation, const Matrix<float>&);
template Matrix<double> activate<double>(Activation, const Matrix<double>&);
template Matrix<float> activate_grad<float>(Activation, const Matrix<float>&);
template Matrix<double> activate_grad<double>(Activation, const Matrix<double>&);
template Matrix<float> activate_grad2<float>(Activation, const Matrix<float>&);
template Matrix<double> activate_grad2<double>(Activation, const Matrix<double>&);

}  // namespace palo::nn
