#pragma once

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "dmest/errors.hpp"

namespace dmest {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

bool all_finite(const Vector& v);
bool all_finite(const Matrix& a);
void require_finite(const Vector& v, const char* what);
void require_finite(const Matrix& a, const char* what);

// Symmetry up to |A_ij - A_ji| <= tol * max(1, max|A|).
bool is_symmetric(const Matrix& a, double tol = 1e-10);
void require_symmetric(const Matrix& a, const char* what);

// Bitwise equality (sizes and payload doubles); used where the contract is
// "bit-identical", e.g. transport equivalence checks.
bool bit_equal(const Vector& a, const Vector& b);
bool bit_equal(const Matrix& a, const Matrix& b);

enum class Definiteness { Positive, Negative };

// Relative rungs applied as ridge = rung * max|diag(A)| after a failed
// factorization at ridge = 0.
inline constexpr double kRidgeLadder[] = {1e-8, 1e-6, 1e-4};

// Solves (A - ridge*I)x = b when A is expected negative definite (the
// factorization runs on ridge*I - A) and (A + ridge*I)x = b when expected
// positive definite. Throws NotDefinite if the Cholesky factorization fails
// at the given ridge.
Vector solve_symmetric(const Matrix& a, const Vector& b, double ridge,
                       Definiteness expected);

struct LadderedSolve {
  Vector x;
  double ridge = 0.0;  // ridge that made the factorization succeed
};

// Tries ridge = 0 first, then the kRidgeLadder rungs scaled by max|diag(A)|;
// throws NotDefinite once the ladder is exhausted.
LadderedSolve solve_symmetric_laddered(const Matrix& a, const Vector& b,
                                       Definiteness expected);

// Cholesky factor of the positive definite form of `a` (negated when the
// caller expects negative definiteness), with the ladder applied.
struct SpdFactor {
  Eigen::LLT<Matrix> llt;
  double ridge = 0.0;
};
SpdFactor factor_spd_laddered(const Matrix& a, Definiteness expected);

// Maximal singular value.
double spectral_norm(const Matrix& a);

// Compensated (Kahan-Babuska/Neumaier) accumulators. Aggregations that must
// be stable across transports and machine orderings route through these; the
// Neumaier update keeps the correction even when one addend swamps the sum.
class KahanScalar {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v))
      comp_ += (sum_ - t) + v;
    else
      comp_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

class KahanVector {
 public:
  explicit KahanVector(Eigen::Index n)
      : sum_(Vector::Zero(n)), comp_(Vector::Zero(n)) {}
  void add(const Vector& v);
  Vector value() const { return sum_ + comp_; }

 private:
  Vector sum_;
  Vector comp_;
};

class KahanMatrix {
 public:
  KahanMatrix(Eigen::Index rows, Eigen::Index cols)
      : sum_(Matrix::Zero(rows, cols)), comp_(Matrix::Zero(rows, cols)) {}
  void add(const Matrix& a);
  Matrix value() const { return sum_ + comp_; }

 private:
  Matrix sum_;
  Matrix comp_;
};

}  // namespace dmest
