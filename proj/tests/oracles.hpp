// Test-only reference implementations, kept independent of the library code
// paths they check.
#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>

#include "dmest/linalg.hpp"
#include "dmest/model.hpp"

namespace oracles {

using dmest::Matrix;
using dmest::Vector;

// Adjugate/determinant inverse via cofactor expansion; fine for d <= 5.
inline double det_recursive(const Matrix& a) {
  const Eigen::Index n = a.rows();
  if (n == 1) return a(0, 0);
  if (n == 2) return a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
  double det = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    Matrix minor(n - 1, n - 1);
    for (Eigen::Index r = 1; r < n; ++r) {
      Eigen::Index cc = 0;
      for (Eigen::Index c = 0; c < n; ++c) {
        if (c == j) continue;
        minor(r - 1, cc++) = a(r, c);
      }
    }
    det += (j % 2 == 0 ? 1.0 : -1.0) * a(0, j) * det_recursive(minor);
  }
  return det;
}

inline Matrix cofactor_inverse(const Matrix& a) {
  const Eigen::Index n = a.rows();
  const double det = det_recursive(a);
  if (det == 0.0) throw std::runtime_error("cofactor_inverse: singular matrix");
  Matrix adj(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      Matrix minor(n - 1, n - 1);
      Eigen::Index rr = 0;
      for (Eigen::Index r = 0; r < n; ++r) {
        if (r == i) continue;
        Eigen::Index cc = 0;
        for (Eigen::Index c = 0; c < n; ++c) {
          if (c == j) continue;
          minor(rr, cc++) = a(r, c);
        }
        ++rr;
      }
      adj(j, i) = ((i + j) % 2 == 0 ? 1.0 : -1.0) * det_recursive(minor);
    }
  }
  return adj / det;
}

// Largest singular value by power iteration on A'A.
inline double power_iteration_spectral_norm(const Matrix& a, int iters = 2000) {
  const Matrix ata = a.transpose() * a;
  Vector v = Vector::Ones(ata.rows());
  v.normalize();
  double lambda = 0.0;
  for (int i = 0; i < iters; ++i) {
    Vector w = ata * v;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    lambda = norm;
  }
  return std::sqrt(lambda);
}

// Five-point central differences.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f,
                          const Vector& theta) {
  Vector g(theta.size());
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    const double h = 1e-5 * (1.0 + std::abs(theta(j)));
    Vector t = theta;
    t(j) = theta(j) + 2.0 * h;
    const double f2p = f(t);
    t(j) = theta(j) + h;
    const double f1p = f(t);
    t(j) = theta(j) - h;
    const double f1m = f(t);
    t(j) = theta(j) - 2.0 * h;
    const double f2m = f(t);
    g(j) = (-f2p + 8.0 * f1p - 8.0 * f1m + f2m) / (12.0 * h);
  }
  return g;
}

inline Matrix fd_hessian(const std::function<Vector(const Vector&)>& grad,
                         const Vector& theta) {
  const Eigen::Index d = theta.size();
  Matrix h(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double step = 1e-5 * (1.0 + std::abs(theta(j)));
    Vector t = theta;
    t(j) = theta(j) + 2.0 * step;
    const Vector g2p = grad(t);
    t(j) = theta(j) + step;
    const Vector g1p = grad(t);
    t(j) = theta(j) - step;
    const Vector g1m = grad(t);
    t(j) = theta(j) - 2.0 * step;
    const Vector g2m = grad(t);
    h.col(j) = (-g2p + 8.0 * g1p - 8.0 * g1m + g2m) / (12.0 * step);
  }
  return h;
}

// Slow series for the polygamma values (Euler-Maclaurin tail corrections),
// summed smallest-terms-first in long double.
inline double series_digamma(double x) {
  constexpr long K = 1000000;
  long double sum = 0.0L;
  for (long n = K - 1; n >= 0; --n)
    sum += 1.0L / (n + 1.0L) - 1.0L / (n + static_cast<long double>(x));
  // gamma = H_K - ln K - 1/(2K) + 1/(12K^2) - ...
  long double harmonic = 0.0L;
  for (long n = K; n >= 1; --n) harmonic += 1.0L / n;
  const long double gamma = harmonic - std::log(static_cast<long double>(K)) -
                            1.0L / (2.0L * K) + 1.0L / (12.0L * K * K);
  const long double tail =
      std::log((K + static_cast<long double>(x)) / (K + 1.0L)) +
      0.5L * (1.0L / (K + 1.0L) - 1.0L / (K + static_cast<long double>(x)));
  return static_cast<double>(-gamma + sum + tail);
}

inline double series_trigamma(double x) {
  constexpr long K = 1000000;
  long double sum = 0.0L;
  for (long n = K - 1; n >= 0; --n) {
    const long double t = n + static_cast<long double>(x);
    sum += 1.0L / (t * t);
  }
  const long double tk = K + static_cast<long double>(x);
  sum += 1.0L / tk + 1.0L / (2.0L * tk * tk) + 1.0L / (6.0L * tk * tk * tk);
  return static_cast<double>(sum);
}

// Plain two-pass mean/std (denominator n-1), no compensation.
inline std::pair<double, double> two_pass_mean_std(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  const double mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = v.size() > 1 ? std::sqrt(ss / (static_cast<double>(v.size()) - 1.0)) : 0.0;
  return {mean, sd};
}

// Pooled evaluation of the mean gradient/Hessian of a model over samples,
// straight summation; used as the monolithic Newton-step oracle.
inline void pooled_grad_hess(const dmest::CriterionModel& model,
                             const std::vector<dmest::Sample>& samples,
                             const Vector& theta, Vector& grad, Matrix& hess) {
  const int d = model.dim();
  grad = Vector::Zero(d);
  hess = Matrix::Zero(d, d);
  for (const auto& s : samples) {
    const dmest::Eval e = model.eval(s, theta);
    grad += e.grad;
    hess += e.hess;
  }
  grad /= static_cast<double>(samples.size());
  hess /= static_cast<double>(samples.size());
}

}  // namespace oracles
