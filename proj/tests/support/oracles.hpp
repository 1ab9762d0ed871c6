#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary. Nothing here calls the code under test.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace palo::oracle {

// Roll, pitch, yaw of R = Rz(yaw) Ry(pitch) Rx(roll), read off the matrix.
inline std::array<double, 3> euler_from_matrix(const Eigen::Matrix3d& r) {
  const double roll = std::atan2(r(2, 1), r(2, 2));
  const double pitch = std::atan2(-r(2, 0), std::hypot(r(0, 0), r(1, 0)));
  const double yaw = std::atan2(r(1, 0), r(0, 0));
  return {roll, pitch, yaw};
}

// Central differences of a scalar function, one coordinate at a time.
inline Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
                                        double h = 1e-4) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

struct GradientCheck {
  double worst_excess = 0.0;  // max(|a - n| - rtol * max(|a|, |n|) - atol), <= 0 passes
  Eigen::Index worst_index = -1;
  double max_abs = 0.0;       // largest gradient magnitude seen, guards against all-zero checks
  bool ok() const { return worst_excess <= 0.0 && max_abs > 0.0; }
};

// Elementwise |a - n| <= rtol * max(|a|, |n|) + atol.
inline GradientCheck compare_gradients(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric,
                                       double rtol = 1e-4, double atol = 1e-8) {
  GradientCheck out;
  out.worst_excess = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    const double excess = std::abs(a - n) - rtol * std::max(std::abs(a), std::abs(n)) - atol;
    if (excess > out.worst_excess) {
      out.worst_excess = excess;
      out.worst_index = i;
    }
    out.max_abs = std::max(out.max_abs, std::abs(a));
  }
  return out;
}

// One-sample Kolmogorov-Smirnov statistic against Uniform(lo, hi).
inline double ks_uniform(std::vector<double> xs, double lo, double hi) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double cdf = std::clamp((xs[i] - lo) / (hi - lo), 0.0, 1.0);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - cdf, cdf - static_cast<double>(i) / n});
  }
  return d;
}

// Mean and standard deviation of clamp(N(mean, sd), lo, hi) by trapezoidal
// integration over the density plus the two point masses at the bounds.
inline std::array<double, 2> clamped_normal_moments(double mean, double sd, double lo, double hi, int steps = 200000) {
  auto pdf = [&](double x) {
    const double z = (x - mean) / sd;
    return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * M_PI));
  };
  auto cdf = [&](double x) { return 0.5 * std::erfc(-(x - mean) / (sd * std::sqrt(2.0))); };
  const double p_lo = cdf(lo);
  const double p_hi = 1.0 - cdf(hi);
  double m1 = p_lo * lo + p_hi * hi;
  double m2 = p_lo * lo * lo + p_hi * hi * hi;
  const double dx = (hi - lo) / steps;
  for (int i = 0; i <= steps; ++i) {
    const double x = lo + i * dx;
    const double w = (i == 0 || i == steps) ? 0.5 : 1.0;
    m1 += w * dx * x * pdf(x);
    m2 += w * dx * x * x * pdf(x);
  }
  return {m1, std::sqrt(m2 - m1 * m1)};
}

// Brute-force advantage: sum_k (gamma lambda)^k delta_{t+k}, cut at episode ends.
inline std::vector<double> gae_by_summation(const std::vector<double>& rewards, const std::vector<double>& values,
                                            const std::vector<double>& dones, double last_value, double gamma,
                                            double lambda) {
  const std::size_t n = rewards.size();
  std::vector<double> delta(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double next = t + 1 < n ? values[t + 1] : last_value;
    delta[t] = rewards[t] + gamma * next * (1.0 - dones[t]) - values[t];
  }
  std::vector<double> adv(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double weight = 1.0;
    for (std::size_t k = t; k < n; ++k) {
      adv[t] += weight * delta[k];
      if (dones[k] > 0.5) break;
      weight *= gamma * lambda;
    }
  }
  return adv;
}

}  // namespace palo::oracle
