#include "dmest/linalg.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>

#include <Eigen/SVD>

namespace dmest {

bool all_finite(const Vector& v) { return v.allFinite(); }
bool all_finite(const Matrix& a) { return a.allFinite(); }

void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw NonFiniteInput(std::string(what) + ": non-finite entries");
}

void require_finite(const Matrix& a, const char* what) {
  if (!a.allFinite()) throw NonFiniteInput(std::string(what) + ": non-finite entries");
}

bool is_symmetric(const Matrix& a, double tol) {
  if (a.rows() != a.cols()) return false;
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = j + 1; i < a.rows(); ++i)
      if (std::abs(a(i, j) - a(j, i)) > tol * scale) return false;
  return true;
}

void require_symmetric(const Matrix& a, const char* what) {
  if (a.rows() != a.cols())
    throw DimensionMismatch(std::string(what) + ": matrix not square");
  if (!is_symmetric(a))
    throw Error(std::string(what) + ": matrix not symmetric");
}

bool bit_equal(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

bool bit_equal(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

namespace {

// One condition-number warning per process is enough; near-singular systems
// show up thousands of times in a resampling sweep.
void warn_ill_conditioned(double cond_estimate) {
  static std::atomic<bool> warned{false};
  bool expected = false;
  if (warned.compare_exchange_strong(expected, true)) {
    std::fprintf(stderr,
                 "dmest: warning: solving a system with condition number about %.3g\n",
                 cond_estimate);
  }
}

Eigen::LLT<Matrix> try_factor(const Matrix& a, double ridge, Definiteness expected) {
  Matrix b;
  if (expected == Definiteness::Negative)
    b = (-a) + ridge * Matrix::Identity(a.rows(), a.cols());
  else
    b = a + ridge * Matrix::Identity(a.rows(), a.cols());
  Eigen::LLT<Matrix> llt(b);
  return llt;
}

void check_inputs(const Matrix& a, const Vector& b) {
  if (a.rows() != a.cols())
    throw DimensionMismatch("solve_symmetric: matrix not square");
  if (a.rows() != b.size())
    throw DimensionMismatch("solve_symmetric: rhs length does not match matrix");
  require_finite(a, "solve_symmetric");
  require_finite(b, "solve_symmetric");
  require_symmetric(a, "solve_symmetric");
}

}  // namespace

Vector solve_symmetric(const Matrix& a, const Vector& b, double ridge,
                       Definiteness expected) {
  check_inputs(a, b);
  if (ridge < 0.0) throw DomainError("solve_symmetric: ridge must be nonnegative");
  Eigen::LLT<Matrix> llt = try_factor(a, ridge, expected);
  if (llt.info() != Eigen::Success)
    throw NotDefinite("solve_symmetric: Cholesky factorization failed");
  Vector x = llt.solve(b);
  if (expected == Definiteness::Negative) x = -x;
  return x;
}

SpdFactor factor_spd_laddered(const Matrix& a, Definiteness expected) {
  require_symmetric(a, "solve_symmetric");
  require_finite(a, "solve_symmetric");
  const double diag_scale = a.diagonal().cwiseAbs().maxCoeff();
  double ridge = 0.0;
  Eigen::LLT<Matrix> llt = try_factor(a, ridge, expected);
  for (std::size_t rung = 0; llt.info() != Eigen::Success && rung < std::size(kRidgeLadder); ++rung) {
    ridge = kRidgeLadder[rung] * diag_scale;
    llt = try_factor(a, ridge, expected);
  }
  if (llt.info() != Eigen::Success)
    throw NotDefinite("solve_symmetric: matrix not definite after ridge ladder");
  const auto& chol_diag = llt.matrixLLT().diagonal();
  const double dmax = chol_diag.maxCoeff();
  const double dmin = chol_diag.minCoeff();
  if (dmin > 0.0) {
    const double cond = (dmax / dmin) * (dmax / dmin);
    if (cond > 1e8) warn_ill_conditioned(cond);
  }
  return SpdFactor{std::move(llt), ridge};
}

LadderedSolve solve_symmetric_laddered(const Matrix& a, const Vector& b,
                                       Definiteness expected) {
  if (a.rows() != b.size())
    throw DimensionMismatch("solve_symmetric: rhs length does not match matrix");
  require_finite(b, "solve_symmetric");
  SpdFactor f = factor_spd_laddered(a, expected);
  Vector x = f.llt.solve(b);
  if (expected == Definiteness::Negative) x = -x;
  return LadderedSolve{std::move(x), f.ridge};
}

double spectral_norm(const Matrix& a) {
  require_finite(a, "spectral_norm");
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(a);
  return svd.singularValues()(0);
}

namespace {

inline void neumaier_add(const double* p, double* s, double* c, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = s[i] + p[i];
    if (std::abs(s[i]) >= std::abs(p[i]))
      c[i] += (s[i] - t) + p[i];
    else
      c[i] += (p[i] - t) + s[i];
    s[i] = t;
  }
}

}  // namespace

void KahanVector::add(const Vector& v) {
  if (v.size() != sum_.size())
    throw DimensionMismatch("KahanVector: size mismatch");
  neumaier_add(v.data(), sum_.data(), comp_.data(), sum_.size());
}

void KahanMatrix::add(const Matrix& a) {
  if (a.rows() != sum_.rows() || a.cols() != sum_.cols())
    throw DimensionMismatch("KahanMatrix: shape mismatch");
  neumaier_add(a.data(), sum_.data(), comp_.data(), sum_.size());
}

}  // namespace dmest
