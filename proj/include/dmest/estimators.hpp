#pragma once

#include <optional>
#include <vector>

#include "dmest/model.hpp"

namespace dmest {

// Per-machine round contributions with delivery flags. Entries may arrive in
// any order; every aggregation reduces in ascending machine_id order with
// compensated summation, which pins the floating-point result regardless of
// transport or arrival interleaving.
struct AggregationInput {
  struct Entry {
    int machine_id = 0;
    bool delivered = false;
    std::optional<Vector> theta;  // round-1 local estimate
    std::optional<Vector> grad;   // round-2 gradient at the broadcast estimate
    std::optional<Matrix> hess;   // round-2 Hessian at the broadcast estimate
  };
  std::vector<Entry> entries;
};

// Mean of the delivered local estimates; throws AllMachinesFailed when no
// machine delivered.
Vector simple_average(const AggregationInput& input);

// (theta0 - s*theta0_sub) / (1 - s), the subsample bias correction.
Vector resampled_average(const Vector& theta0, const Vector& theta0_sub, double s);

// One Newton-Raphson update from `start` using the delivered-machine averages
// of gradient and Hessian. Any finite start is accepted.
Vector one_step_update(const Vector& start, const AggregationInput& input);

struct SandwichCovariance {
  Matrix sigma;        // bread^-1 * score_outer * bread^-1
  Matrix score_outer;  // plug-in mean of grad * grad'
  Matrix bread;        // plug-in mean Hessian
};

// Plug-in sandwich covariance at the supplied estimate. Enforces the
// positive-semidefiniteness of sigma (smallest eigenvalue >= -1e-8 * trace).
SandwichCovariance sandwich_covariance(const CriterionModel& model,
                                       const std::vector<Sample>& samples,
                                       const Vector& theta);

}  // namespace dmest
