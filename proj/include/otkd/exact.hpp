#pragma once

#include <Eigen/Core>
#include <vector>

#include "otkd/point_set.hpp"
#include "otkd/sinkhorn.hpp"

namespace otkd {

/// Ground-truth solve on a small instance. Test-oracle quality, not tuned.
struct ExactPlanResult {
  double value = 0.0;
  Eigen::MatrixXd plan;
  int iterations = 0;
};

/// Exact balanced optimal transport by the transportation simplex:
/// north-west-corner start, then stepping-stone pivots until every reduced
/// cost is nonnegative. Requires equal total masses and N, M <= 32.
ExactPlanResult exact_balanced_ot(const WeightedPointSet& a, const WeightedPointSet& b, int p);

/// High-precision primal minimizer of the KL-relaxed entropic objective:
/// damped interior Newton steps on the plan (the objective is strictly
/// convex with an explicit Hessian), with backtracked multiplicative updates
/// as fallback, so every accepted step decreases the objective and the limit
/// is the global optimum. Independent of the dual Sinkhorn iteration (shares
/// only cost_matrix). N, M <= 6. `objective_trace`, when given, receives the
/// objective after every accepted step.
ExactPlanResult primal_uot_oracle(const WeightedPointSet& a, const WeightedPointSet& b,
                                  const SinkhornConfig& cfg, double precision = 1e-12,
                                  std::vector<double>* objective_trace = nullptr);

/// Evaluates the KL-relaxed objective directly on an explicit plan.
/// Shared by the oracle and by decomposition checks in tests.
double uot_objective(const Eigen::MatrixXd& plan, const Eigen::MatrixXd& cost,
                     const Eigen::VectorXd& a_weights, const Eigen::VectorXd& b_weights,
                     double epsilon, double rho);

}  // namespace otkd
