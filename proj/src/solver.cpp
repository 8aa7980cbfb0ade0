#include "dmest/solver.hpp"

#include <algorithm>
#include <cmath>

namespace dmest {

namespace {

void check_config(const SolveConfig& cfg) {
  if (cfg.max_iters < 1) throw DomainError("solve config: max_iters must be >= 1");
  if (!(cfg.grad_tol > 0.0 && cfg.grad_tol < 1.0))
    throw DomainError("solve config: grad_tol must lie in (0,1)");
  if (!(cfg.step_shrink > 0.0 && cfg.step_shrink < 1.0))
    throw DomainError("solve config: step_shrink must lie in (0,1)");
  if (!(cfg.min_step > 0.0)) throw DomainError("solve config: min_step must be positive");
}

// Ascent direction even when the (chain-ruled) Hessian has lost negative
// definiteness, which happens on degenerate fits whose maximizer sits at the
// domain boundary (a handful of Beta observations, say). A diagonal shift
// past the Gershgorin bound makes shift*I - H positive definite, so the
// solve interpolates toward plain gradient ascent instead of aborting.
Vector ascent_direction(const Matrix& hess_internal, const Vector& grad_internal) {
  try {
    return solve_symmetric_laddered((-hess_internal).eval(), grad_internal,
                                    Definiteness::Positive)
        .x;
  } catch (const NotDefinite&) {
    const Eigen::Index d = hess_internal.rows();
    double bound = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      double row = 0.0;
      for (Eigen::Index j = 0; j < d; ++j) row += std::abs(hess_internal(i, j));
      bound = std::max(bound, row);
    }
    const double shift = 2.0 * bound + 1.0;
    const Matrix damped =
        shift * Matrix::Identity(d, d) - hess_internal;
    return solve_symmetric(damped, grad_internal, 0.0, Definiteness::Positive);
  }
}

}  // namespace

SolveResult m_estimate(const CriterionModel& model, const Shard& shard,
                       const Vector& init, const SolveConfig& cfg) {
  check_config(cfg);
  if (shard.samples.empty()) throw EmptyShard("m_estimate: empty shard");
  require_finite(init, "m_estimate: init");
  if (!model.in_domain(init)) throw DomainError("m_estimate: init outside model domain");

  const int d = model.dim();
  Vector theta = init;
  Vector u = model.to_internal(theta);

  double value = 0.0;
  Vector grad(d);
  Matrix hess(d, d);
  model.shard_eval_into(shard, theta, value, grad, hess);

  SolveResult out;
  out.ascent_trace.push_back(value);

  int accepted = 0;
  SolveStatus status = SolveStatus::MaxIterations;
  for (int iter = 0;; ++iter) {
    const double grad_norm = grad.cwiseAbs().maxCoeff();
    if (grad_norm <= cfg.grad_tol) {
      status = SolveStatus::Converged;
      break;
    }
    if (iter == cfg.max_iters) {
      status = SolveStatus::MaxIterations;
      break;
    }

    Vector gi = grad;
    Matrix hi = hess;
    model.chain_rule(theta, gi, hi);
    const Vector direction = ascent_direction(hi, gi);

    bool took_step = false;
    for (double alpha = 1.0; alpha >= cfg.min_step; alpha *= cfg.step_shrink) {
      const Vector u_try = u + alpha * direction;
      const Vector theta_try = model.from_internal(u_try);
      if (!theta_try.allFinite() || !model.in_domain(theta_try)) continue;
      double value_try;
      try {
        value_try = model.shard_value(shard, theta_try);
      } catch (const DomainError&) {
        continue;
      }
      if (!std::isfinite(value_try)) continue;
      if (value_try > value) {
        u = u_try;
        theta = theta_try;
        model.shard_eval_into(shard, theta, value, grad, hess);
        took_step = true;
        break;
      }
      // Within round-off the criterion cannot certify ascent; accept the step
      // only if it still makes gradient progress, so grad_tol stays reachable.
      const double slack = 8.0 * 2.220446049250313e-16 * std::max(1.0, std::abs(value));
      if (value_try >= value - slack) {
        double value_probe = 0.0;
        Vector grad_probe(d);
        Matrix hess_probe(d, d);
        model.shard_eval_into(shard, theta_try, value_probe, grad_probe, hess_probe);
        if (grad_probe.cwiseAbs().maxCoeff() < grad.cwiseAbs().maxCoeff()) {
          u = u_try;
          theta = theta_try;
          value = value_probe;
          grad = grad_probe;
          hess = hess_probe;
          took_step = true;
          break;
        }
      }
    }
    if (!took_step) {
      status = SolveStatus::LineSearchFloor;
      break;
    }

    ++accepted;
    out.ascent_trace.push_back(value);
  }

  out.theta_hat = theta;
  out.iterations = accepted;
  out.final_grad_norm = grad.cwiseAbs().maxCoeff();
  out.converged = (status == SolveStatus::Converged);
  out.status = status;
  out.hessian_at_opt = hess;
  return out;
}

Shard pool_shards(const std::vector<Shard>& shards) {
  if (shards.empty()) throw EmptyInput("pool_shards: no shards");
  std::vector<const Shard*> ordered;
  ordered.reserve(shards.size());
  for (const Shard& s : shards) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(),
            [](const Shard* a, const Shard* b) { return a->machine_id < b->machine_id; });
  Shard pooled;
  pooled.machine_id = 0;
  for (const Shard* s : ordered)
    pooled.samples.insert(pooled.samples.end(), s->samples.begin(), s->samples.end());
  return pooled;
}

SolveResult centralized_estimate(const CriterionModel& model,
                                 const std::vector<Shard>& shards,
                                 const Vector& init, const SolveConfig& cfg) {
  if (shards.size() == 1) return m_estimate(model, shards.front(), init, cfg);
  return m_estimate(model, pool_shards(shards), init, cfg);
}

}  // namespace dmest
