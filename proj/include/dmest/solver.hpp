#pragma once

#include <vector>

#include "dmest/model.hpp"

namespace dmest {

struct SolveConfig {
  int max_iters = 100;
  double grad_tol = 1e-10;     // on the max-abs entry of the natural gradient
  double step_shrink = 0.5;    // backtracking factor, in (0,1)
  double min_step = 1e-12;     // line-search floor
};

enum class SolveStatus { Converged, MaxIterations, LineSearchFloor };

struct SolveResult {
  Vector theta_hat;
  int iterations = 0;            // accepted Newton steps
  double final_grad_norm = 0.0;  // max-abs of the natural gradient
  bool converged = false;
  SolveStatus status = SolveStatus::MaxIterations;
  Matrix hessian_at_opt;         // natural-parameter Hessian at theta_hat
  std::vector<double> ascent_trace;  // criterion value at each accepted iterate
};

// Newton ascent with backtracking on strict criterion increase. Non-convergence
// degrades to the best iterate with converged=false rather than throwing, so a
// struggling machine weakens an experiment instead of aborting it.
SolveResult m_estimate(const CriterionModel& model, const Shard& shard,
                       const Vector& init, const SolveConfig& config = {});

// The oracle estimator: m_estimate on the pooled samples of all shards
// (ascending machine_id order).
SolveResult centralized_estimate(const CriterionModel& model,
                                 const std::vector<Shard>& shards,
                                 const Vector& init,
                                 const SolveConfig& config = {});

Shard pool_shards(const std::vector<Shard>& shards);

}  // namespace dmest
