#include "dmest/estimators.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

namespace dmest {

namespace {

std::vector<const AggregationInput::Entry*> ordered_entries(
    const AggregationInput& input) {
  std::vector<const AggregationInput::Entry*> out;
  out.reserve(input.entries.size());
  for (const auto& e : input.entries) out.push_back(&e);
  std::sort(out.begin(), out.end(),
            [](const auto* a, const auto* b) { return a->machine_id < b->machine_id; });
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i]->machine_id == out[i - 1]->machine_id)
      throw DomainError("aggregation: duplicate machine_id " +
                        std::to_string(out[i]->machine_id));
  return out;
}

}  // namespace

Vector simple_average(const AggregationInput& input) {
  const auto ordered = ordered_entries(input);
  KahanVector acc(0);
  Eigen::Index d = -1;
  long delivered = 0;
  for (const auto* e : ordered) {
    if (!e->delivered) continue;
    if (!e->theta.has_value())
      throw DomainError("simple_average: delivered entry without estimate");
    if (d < 0) {
      d = e->theta->size();
      acc = KahanVector(d);
    }
    if (e->theta->size() != d)
      throw DimensionMismatch("simple_average: estimate dimension mismatch");
    require_finite(*e->theta, "simple_average: local estimate");
    acc.add(*e->theta);
    ++delivered;
  }
  if (delivered == 0)
    throw AllMachinesFailed("simple_average: no delivered estimates", 1);
  return acc.value() / static_cast<double>(delivered);
}

Vector resampled_average(const Vector& theta0, const Vector& theta0_sub, double s) {
  if (!(s > 0.0 && s < 1.0))
    throw DomainError("resampled_average: ratio must lie in (0,1)");
  if (theta0.size() != theta0_sub.size())
    throw DimensionMismatch("resampled_average: estimate dimension mismatch");
  require_finite(theta0, "resampled_average");
  require_finite(theta0_sub, "resampled_average");
  return (theta0 - s * theta0_sub) / (1.0 - s);
}

Vector one_step_update(const Vector& start, const AggregationInput& input) {
  require_finite(start, "one_step_update: start");
  const auto ordered = ordered_entries(input);
  const Eigen::Index d = start.size();
  KahanVector gacc(d);
  KahanMatrix hacc(d, d);
  long delivered = 0;
  for (const auto* e : ordered) {
    if (!e->delivered) continue;
    if (!e->grad.has_value() || !e->hess.has_value())
      throw DomainError("one_step_update: delivered entry without gradient/Hessian");
    if (e->grad->size() != d || e->hess->rows() != d || e->hess->cols() != d)
      throw DimensionMismatch("one_step_update: summary dimension mismatch");
    require_finite(*e->grad, "one_step_update: gradient");
    require_finite(*e->hess, "one_step_update: Hessian");
    require_symmetric(*e->hess, "one_step_update: Hessian");
    gacc.add(*e->grad);
    hacc.add(*e->hess);
    ++delivered;
  }
  if (delivered == 0)
    throw AllMachinesFailed("one_step_update: no delivered summaries", 2);
  const double inv = 1.0 / static_cast<double>(delivered);
  const Vector grad_bar = gacc.value() * inv;
  const Matrix hess_bar = hacc.value() * inv;
  const LadderedSolve sol =
      solve_symmetric_laddered(hess_bar, grad_bar, Definiteness::Negative);
  return start - sol.x;
}

SandwichCovariance sandwich_covariance(const CriterionModel& model,
                                       const std::vector<Sample>& samples,
                                       const Vector& theta) {
  if (samples.empty()) throw EmptyInput("sandwich_covariance: no samples");
  require_finite(theta, "sandwich_covariance: theta");
  const int d = model.dim();
  KahanMatrix bread_acc(d, d);
  KahanMatrix meat_acc(d, d);
  double m = 0.0;
  Vector g(d);
  Matrix h(d, d);
  Matrix outer(d, d);
  for (const Sample& s : samples) {
    model.eval_into(s, theta, m, g, h);
    bread_acc.add(h);
    outer.noalias() = g * g.transpose();
    meat_acc.add(outer);
  }
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  SandwichCovariance out;
  out.bread = bread_acc.value() * inv_n;
  out.score_outer = meat_acc.value() * inv_n;

  const SpdFactor f = factor_spd_laddered(out.bread, Definiteness::Negative);
  // bread^-1 M bread^-1 = (-bread)^-1 M (-bread)^-1; the sign cancels.
  const Matrix half = f.llt.solve(out.score_outer);
  Matrix sigma = f.llt.solve(half.transpose());
  out.sigma = 0.5 * (sigma + sigma.transpose());

  Eigen::SelfAdjointEigenSolver<Matrix> eigs(out.sigma, Eigen::EigenvaluesOnly);
  const double min_eig = eigs.eigenvalues().minCoeff();
  const double trace = out.sigma.trace();
  if (min_eig < -1e-8 * std::max(trace, 0.0))
    throw Error("sandwich_covariance: sigma is not positive semidefinite");
  return out;
}

}  // namespace dmest
