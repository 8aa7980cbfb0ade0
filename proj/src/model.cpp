#include "dmest/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace dmest {

double digamma(double x) {
  if (!(x > 0.0)) throw DomainError("digamma: argument must be positive");
  double result = 0.0;
  while (x < 10.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double t = inv * inv;
  const double series =
      t * (1.0 / 12.0 -
           t * (1.0 / 120.0 -
                t * (1.0 / 252.0 -
                     t * (1.0 / 240.0 -
                          t * (1.0 / 132.0 -
                               t * (691.0 / 32760.0 - t * (1.0 / 12.0)))))));
  return result + std::log(x) - 0.5 * inv - series;
}

double trigamma(double x) {
  if (!(x > 0.0)) throw DomainError("trigamma: argument must be positive");
  double result = 0.0;
  while (x < 10.0) {
    result += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double t = inv * inv;
  const double series =
      1.0 / 6.0 -
      t * (1.0 / 30.0 -
           t * (1.0 / 42.0 -
                t * (1.0 / 30.0 -
                     t * (5.0 / 66.0 -
                          t * (691.0 / 2730.0 - t * (7.0 / 6.0))))));
  return result + inv + 0.5 * t + t * inv * series;
}

double CriterionModel::value(const Sample& s, const Vector& theta) const {
  double m = 0.0;
  Vector g(dim());
  Matrix h(dim(), dim());
  eval_into(s, theta, m, g, h);
  return m;
}

Eval CriterionModel::eval(const Sample& s, const Vector& theta) const {
  Eval e;
  e.grad.resize(dim());
  e.hess.resize(dim(), dim());
  eval_into(s, theta, e.value, e.grad, e.hess);
  return e;
}

namespace {

[[noreturn]] void rethrow_with_sample(const Error& e, const Shard& shard,
                                      std::size_t index, bool domain) {
  const std::string what = std::string(e.what()) + " (machine " +
                           std::to_string(shard.machine_id) + ", sample " +
                           std::to_string(index) + ")";
  if (domain) throw DomainError(what);
  throw NonFiniteInput(what);
}

}  // namespace

void CriterionModel::shard_eval_into(const Shard& shard, const Vector& theta,
                                     double& value, Vector& grad,
                                     Matrix& hess) const {
  const int d = dim();
  KahanScalar vsum;
  KahanVector gsum(d);
  KahanMatrix hsum(d, d);
  Vector gbuf(d);
  Matrix hbuf(d, d);
  double mbuf = 0.0;
  for (std::size_t i = 0; i < shard.samples.size(); ++i) {
    try {
      eval_into(shard.samples[i], theta, mbuf, gbuf, hbuf);
    } catch (const DomainError& e) {
      rethrow_with_sample(e, shard, i, true);
    } catch (const NonFiniteInput& e) {
      rethrow_with_sample(e, shard, i, false);
    }
    vsum.add(mbuf);
    gsum.add(gbuf);
    hsum.add(hbuf);
  }
  const double inv_n = 1.0 / static_cast<double>(shard.samples.size());
  value = vsum.value() * inv_n;
  grad = gsum.value() * inv_n;
  hess = hsum.value() * inv_n;
}

double CriterionModel::shard_value(const Shard& shard, const Vector& theta) const {
  KahanScalar vsum;
  for (std::size_t i = 0; i < shard.samples.size(); ++i) {
    try {
      vsum.add(value(shard.samples[i], theta));
    } catch (const DomainError& e) {
      rethrow_with_sample(e, shard, i, true);
    } catch (const NonFiniteInput& e) {
      rethrow_with_sample(e, shard, i, false);
    }
  }
  return vsum.value() / static_cast<double>(shard.samples.size());
}

void CriterionModel::chain_rule(const Vector&, Vector&, Matrix&) const {}

ShardEval shard_criterion(const CriterionModel& model, const Shard& shard,
                          const Vector& theta) {
  if (shard.samples.empty()) throw EmptyShard("shard_criterion: empty shard");
  require_finite(theta, "shard_criterion: theta");
  ShardEval out;
  out.grad.resize(model.dim());
  out.hess.resize(model.dim(), model.dim());
  model.shard_eval_into(shard, theta, out.value, out.grad, out.hess);
  return out;
}

double shard_value(const CriterionModel& model, const Shard& shard,
                   const Vector& theta) {
  if (shard.samples.empty()) throw EmptyShard("shard_value: empty shard");
  require_finite(theta, "shard_value: theta");
  return model.shard_value(shard, theta);
}

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5*log(2*pi)

double stable_softplus(double z) {
  // log(1 + exp(z)); past |z|=36 the dropped term is below double precision.
  if (z > 36.0) return z;
  if (z < -36.0) return std::exp(z);
  return std::log1p(std::exp(z));
}

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

class LogisticModel final : public CriterionModel {
 public:
  explicit LogisticModel(int d) : d_(d) {
    if (d < 1) throw DomainError("logistic model: dimension must be >= 1");
  }

  int dim() const override { return d_; }
  std::string_view name() const override { return "logistic"; }
  bool in_domain(const Vector& theta) const override {
    return theta.size() == d_ && theta.allFinite();
  }

  void eval_into(const Sample& s, const Vector& theta, double& value,
                 Vector& grad, Matrix& hess) const override {
    const double y = check(s, theta);
    const double z = s.x.dot(theta);
    if (!std::isfinite(z)) throw NonFiniteInput("logistic: linear predictor overflow");
    const double p = stable_sigmoid(z);
    value = y * z - stable_softplus(z);
    grad.noalias() = (y - p) * s.x;
    hess.noalias() = (-p * (1.0 - p)) * (s.x * s.x.transpose());
  }

  double value(const Sample& s, const Vector& theta) const override {
    const double y = check(s, theta);
    const double z = s.x.dot(theta);
    if (!std::isfinite(z)) throw NonFiniteInput("logistic: linear predictor overflow");
    return y * z - stable_softplus(z);
  }

  Vector default_init(const Shard&) const override { return Vector::Zero(d_); }

 private:
  double check(const Sample& s, const Vector& theta) const {
    if (s.x.size() != d_ || theta.size() != d_)
      throw DimensionMismatch("logistic: covariate/parameter dimension mismatch");
    if (!s.x.allFinite() || !theta.allFinite())
      throw NonFiniteInput("logistic: non-finite input");
    if (!s.y.has_value()) throw DomainError("logistic: sample has no response");
    const double y = *s.y;
    if (y != 0.0 && y != 1.0)
      throw DomainError("logistic: response must be 0 or 1");
    return y;
  }

  int d_;
};

class BetaModel final : public CriterionModel {
 public:
  // Optimization runs over the compact box [0.01, 100]^2. Degenerate fits
  // (a 3-sample subsample whose likelihood peaks at a point mass) saturate at
  // the box edge instead of racing off along the ridge.
  static constexpr double kParamMin = 0.01;
  static constexpr double kParamMax = 100.0;

  int dim() const override { return 2; }
  std::string_view name() const override { return "beta"; }
  bool in_domain(const Vector& theta) const override {
    return theta.size() == 2 && theta.allFinite() &&
           theta(0) >= kParamMin && theta(0) <= kParamMax &&
           theta(1) >= kParamMin && theta(1) <= kParamMax;
  }

  void eval_into(const Sample& s, const Vector& theta, double& value,
                 Vector& grad, Matrix& hess) const override {
    const double x = check(s, theta);
    const double a = theta(0);
    const double b = theta(1);
    const double lx = std::log(x);
    const double l1x = std::log1p(-x);
    const double psi_ab = digamma(a + b);
    const double tri_ab = trigamma(a + b);
    value = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
            (a - 1.0) * lx + (b - 1.0) * l1x;
    grad(0) = lx - digamma(a) + psi_ab;
    grad(1) = l1x - digamma(b) + psi_ab;
    hess(0, 0) = tri_ab - trigamma(a);
    hess(0, 1) = tri_ab;
    hess(1, 0) = tri_ab;
    hess(1, 1) = tri_ab - trigamma(b);
  }

  double value(const Sample& s, const Vector& theta) const override {
    const double x = check(s, theta);
    const double a = theta(0);
    const double b = theta(1);
    return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
           (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x);
  }

  // The Beta Hessian is constant in x and the gradient depends on the data
  // only through log x and log(1-x), so shard evaluation reduces to two
  // compensated means.
  void shard_eval_into(const Shard& shard, const Vector& theta, double& value,
                       Vector& grad, Matrix& hess) const override {
    const auto [mean_lx, mean_l1x] = log_means(shard, theta);
    const double a = theta(0);
    const double b = theta(1);
    const double psi_ab = digamma(a + b);
    const double tri_ab = trigamma(a + b);
    value = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
            (a - 1.0) * mean_lx + (b - 1.0) * mean_l1x;
    grad(0) = mean_lx - digamma(a) + psi_ab;
    grad(1) = mean_l1x - digamma(b) + psi_ab;
    hess(0, 0) = tri_ab - trigamma(a);
    hess(0, 1) = tri_ab;
    hess(1, 0) = tri_ab;
    hess(1, 1) = tri_ab - trigamma(b);
  }

  double shard_value(const Shard& shard, const Vector& theta) const override {
    const auto [mean_lx, mean_l1x] = log_means(shard, theta);
    const double a = theta(0);
    const double b = theta(1);
    return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
           (a - 1.0) * mean_lx + (b - 1.0) * mean_l1x;
  }

  Vector default_init(const Shard& shard) const override {
    // Method of moments, clamped into [0.01, 100]^2.
    KahanScalar sum;
    KahanScalar sumsq;
    for (const Sample& s : shard.samples) {
      sum.add(s.x(0));
      sumsq.add(s.x(0) * s.x(0));
    }
    const double n = static_cast<double>(shard.samples.size());
    const double mean = sum.value() / n;
    const double var = sumsq.value() / n - mean * mean;
    Vector theta(2);
    if (var > 1e-12 && mean > 0.0 && mean < 1.0) {
      const double t = mean * (1.0 - mean) / var - 1.0;
      theta(0) = mean * t;
      theta(1) = (1.0 - mean) * t;
    } else {
      theta(0) = 1.0;
      theta(1) = 1.0;
    }
    theta(0) = std::clamp(theta(0), kParamMin, kParamMax);
    theta(1) = std::clamp(theta(1), kParamMin, kParamMax);
    return theta;
  }

  Vector to_internal(const Vector& theta) const override {
    return theta.array().log().matrix();
  }
  Vector from_internal(const Vector& u) const override {
    return u.array().exp().matrix();
  }
  void chain_rule(const Vector& theta, Vector& grad, Matrix& hess) const override {
    const double a = theta(0);
    const double b = theta(1);
    const double ga = grad(0);
    const double gb = grad(1);
    hess(0, 0) = a * a * hess(0, 0) + a * ga;
    hess(0, 1) = a * b * hess(0, 1);
    hess(1, 0) = hess(0, 1);
    hess(1, 1) = b * b * hess(1, 1) + b * gb;
    grad(0) = a * ga;
    grad(1) = b * gb;
  }

 private:
  double check(const Sample& s, const Vector& theta) const {
    if (s.x.size() != 1) throw DimensionMismatch("beta: sample must be scalar");
    if (theta.size() != 2) throw DimensionMismatch("beta: parameter must be (alpha, beta)");
    if (!std::isfinite(s.x(0)) || !theta.allFinite())
      throw NonFiniteInput("beta: non-finite input");
    if (!(theta(0) > 0.0) || !(theta(1) > 0.0))
      throw DomainError("beta: parameters must be positive");
    const double x = s.x(0);
    if (!(x > 0.0 && x < 1.0)) throw DomainError("beta: observation outside (0,1)");
    return x;
  }

  std::pair<double, double> log_means(const Shard& shard, const Vector& theta) const {
    KahanScalar lx;
    KahanScalar l1x;
    for (std::size_t i = 0; i < shard.samples.size(); ++i) {
      double x;
      try {
        x = check(shard.samples[i], theta);
      } catch (const DomainError& e) {
        rethrow_with_sample(e, shard, i, true);
      } catch (const NonFiniteInput& e) {
        rethrow_with_sample(e, shard, i, false);
      }
      lx.add(std::log(x));
      l1x.add(std::log1p(-x));
    }
    const double n = static_cast<double>(shard.samples.size());
    return {lx.value() / n, l1x.value() / n};
  }
};

class GaussianModel final : public CriterionModel {
 public:
  int dim() const override { return 2; }
  std::string_view name() const override { return "gaussian"; }
  bool in_domain(const Vector& theta) const override {
    return theta.size() == 2 && theta.allFinite() && theta(1) > 0.0;
  }

  void eval_into(const Sample& s, const Vector& theta, double& value,
                 Vector& grad, Matrix& hess) const override {
    const double x = check(s, theta);
    const double mu = theta(0);
    const double v = theta(1);
    const double e = x - mu;
    const double inv_v = 1.0 / v;
    value = -e * e * 0.5 * inv_v - kHalfLog2Pi - 0.5 * std::log(v);
    grad(0) = e * inv_v;
    grad(1) = 0.5 * inv_v * inv_v * e * e - 0.5 * inv_v;
    hess(0, 0) = -inv_v;
    hess(0, 1) = -e * inv_v * inv_v;
    hess(1, 0) = hess(0, 1);
    hess(1, 1) = -e * e * inv_v * inv_v * inv_v + 0.5 * inv_v * inv_v;
  }

  double value(const Sample& s, const Vector& theta) const override {
    const double x = check(s, theta);
    const double e = x - theta(0);
    const double v = theta(1);
    return -e * e / (2.0 * v) - kHalfLog2Pi - 0.5 * std::log(v);
  }

  Vector default_init(const Shard& shard) const override {
    const std::size_t head = std::min<std::size_t>(32, shard.samples.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < head; ++i) sum += shard.samples[i].x(0);
    const double mean = sum / static_cast<double>(head);
    double ss = 0.0;
    for (std::size_t i = 0; i < head; ++i) {
      const double e = shard.samples[i].x(0) - mean;
      ss += e * e;
    }
    Vector theta(2);
    theta(0) = mean;
    theta(1) = std::max(ss / static_cast<double>(head), 1e-6);
    return theta;
  }

 private:
  double check(const Sample& s, const Vector& theta) const {
    if (s.x.size() != 1) throw DimensionMismatch("gaussian: sample must be scalar");
    if (theta.size() != 2)
      throw DimensionMismatch("gaussian: parameter must be (mu, sigma2)");
    if (!std::isfinite(s.x(0)) || !theta.allFinite())
      throw NonFiniteInput("gaussian: non-finite input");
    if (!(theta(1) > 0.0)) throw DomainError("gaussian: sigma2 must be positive");
    return s.x(0);
  }
};

class GaussianMeanModel final : public CriterionModel {
 public:
  explicit GaussianMeanModel(double sigma2) : sigma2_(sigma2) {
    if (!(sigma2 > 0.0)) throw DomainError("gaussian_mean: sigma2 must be positive");
  }

  int dim() const override { return 1; }
  std::string_view name() const override { return "gaussian_mean"; }
  bool in_domain(const Vector& theta) const override {
    return theta.size() == 1 && theta.allFinite();
  }

  void eval_into(const Sample& s, const Vector& theta, double& value,
                 Vector& grad, Matrix& hess) const override {
    const double x = check(s, theta);
    const double e = x - theta(0);
    value = -e * e / (2.0 * sigma2_) - kHalfLog2Pi - 0.5 * std::log(sigma2_);
    grad(0) = e / sigma2_;
    hess(0, 0) = -1.0 / sigma2_;
  }

  double value(const Sample& s, const Vector& theta) const override {
    const double x = check(s, theta);
    const double e = x - theta(0);
    return -e * e / (2.0 * sigma2_) - kHalfLog2Pi - 0.5 * std::log(sigma2_);
  }

  Vector default_init(const Shard& shard) const override {
    const std::size_t head = std::min<std::size_t>(32, shard.samples.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < head; ++i) sum += shard.samples[i].x(0);
    Vector theta(1);
    theta(0) = sum / static_cast<double>(head);
    return theta;
  }

 private:
  double check(const Sample& s, const Vector& theta) const {
    if (s.x.size() != 1) throw DimensionMismatch("gaussian_mean: sample must be scalar");
    if (theta.size() != 1) throw DimensionMismatch("gaussian_mean: parameter must be mu");
    if (!std::isfinite(s.x(0)) || !theta.allFinite())
      throw NonFiniteInput("gaussian_mean: non-finite input");
    return s.x(0);
  }

  double sigma2_;
};

}  // namespace

std::unique_ptr<CriterionModel> logistic_model(int d) {
  return std::make_unique<LogisticModel>(d);
}

std::unique_ptr<CriterionModel> beta_model() { return std::make_unique<BetaModel>(); }

std::unique_ptr<CriterionModel> gaussian_model() {
  return std::make_unique<GaussianModel>();
}

std::unique_ptr<CriterionModel> gaussian_mean_model(double sigma2) {
  return std::make_unique<GaussianMeanModel>(sigma2);
}

std::unique_ptr<CriterionModel> make_model(std::string_view name, int d) {
  if (name == "logistic") return logistic_model(d);
  if (name == "beta") return beta_model();
  if (name == "gaussian") return gaussian_model();
  if (name == "gaussian_mean") return gaussian_mean_model(1.0);
  throw DomainError("unknown model: " + std::string(name));
}

}  // namespace dmest
