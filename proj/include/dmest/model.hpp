#pragma once

#include <memory>
#include <optional>
#include <string_view>
#include <vector>

#include "dmest/linalg.hpp"

namespace dmest {

// One observation. Regression-style models use covariates x plus response y;
// i.i.d.-only models carry the observed value in x(0) and leave y unset.
struct Sample {
  Vector x;
  std::optional<double> y;
};

// The n samples held by one machine.
struct Shard {
  int machine_id = 0;
  std::vector<Sample> samples;
};

struct Eval {
  double value = 0.0;
  Vector grad;
  Matrix hess;
};

struct ShardEval {
  double value = 0.0;
  Vector grad;
  Matrix hess;
};

// Criterion function m(x;theta) with analytic gradient and Hessian, plus the
// hooks the solver needs: a domain test, a cheap default initializer, and an
// optional change of optimizer coordinates for constrained domains.
class CriterionModel {
 public:
  virtual ~CriterionModel() = default;

  virtual int dim() const = 0;
  virtual std::string_view name() const = 0;
  virtual bool in_domain(const Vector& theta) const = 0;

  // Writes m, grad (dim) and hess (dim x dim) for one sample; buffers must be
  // pre-sized by the caller.
  virtual void eval_into(const Sample& s, const Vector& theta, double& value,
                         Vector& grad, Matrix& hess) const = 0;
  virtual double value(const Sample& s, const Vector& theta) const;
  Eval eval(const Sample& s, const Vector& theta) const;

  virtual Vector default_init(const Shard& shard) const = 0;

  // Sample means of (m, grad, hess) over a shard, compensated summation in
  // shard order. Models with x-independent derivative structure override
  // these with sufficient-statistic versions.
  virtual void shard_eval_into(const Shard& shard, const Vector& theta,
                               double& value, Vector& grad, Matrix& hess) const;
  virtual double shard_value(const Shard& shard, const Vector& theta) const;

  // Optimizer coordinates; identity unless the domain needs it.
  virtual Vector to_internal(const Vector& theta) const { return theta; }
  virtual Vector from_internal(const Vector& u) const { return u; }
  // Rewrites natural-parameter grad/hess at theta into internal coordinates.
  virtual void chain_rule(const Vector& theta, Vector& grad, Matrix& hess) const;
};

// y*x'theta - log(1+exp(x'theta)), y in {0,1}; overflow-safe past |x'theta|=36.
std::unique_ptr<CriterionModel> logistic_model(int d);
// log Beta(alpha,beta) density of x in (0,1); solver runs in (log a, log b).
std::unique_ptr<CriterionModel> beta_model();
// Normal log-likelihood in (mu, sigma^2).
std::unique_ptr<CriterionModel> gaussian_model();
// Normal log-likelihood in mu alone with sigma^2 held fixed; the criterion is
// an exact quadratic, which makes Newton a one-shot solve.
std::unique_ptr<CriterionModel> gaussian_mean_model(double sigma2);

std::unique_ptr<CriterionModel> make_model(std::string_view name, int d);

ShardEval shard_criterion(const CriterionModel& model, const Shard& shard,
                          const Vector& theta);
double shard_value(const CriterionModel& model, const Shard& shard,
                   const Vector& theta);

// Polygamma via upward recurrence to x >= 10, then the Bernoulli asymptotic
// series through B14.
double digamma(double x);
double trigamma(double x);

}  // namespace dmest
