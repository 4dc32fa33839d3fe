#pragma once

#include <Eigen/Core>
#include <string_view>
#include <utility>

#include "otkd/point_set.hpp"

namespace otkd {

/// Controls for the entropy-regularized, KL-relaxed transport solver.
/// The objective uses regularization strengths epsilon^2 and rho^2; the
/// fields here hold epsilon and rho themselves.
struct SinkhornConfig {
  double epsilon = 1e-3;  // entropic scale
  double rho = 0.5;       // marginal-relaxation scale
  int p_exponent = 2;     // ground-cost norm, 1 or 2
  int max_iter = 500;     // total dual iterations, across annealing stages
  // Converged when the sup-norm potential change falls below tol * epsilon^2,
  // or when the primal-dual gap certifies the objective to tol relative.
  double tol = 1e-6;
  bool debiased = true;
  bool anneal = false;    // geometric epsilon^2 schedule from the cost diameter down
};

/// Kantorovich dual variables, in cost units.
struct DualPotentials {
  Eigen::VectorXd f;  // size N (first argument)
  Eigen::VectorXd g;  // size M (second argument)
};

/// Decomposition of the relaxed transport objective at the solver's plan.
struct TransportSummary {
  double transport_cost = 0.0;  // sum_ij pi_ij C_ij
  double kl_joint = 0.0;        // eps^2 * KL(pi, a (x) b)
  double kl_row = 0.0;          // rho^2 * KL(pi 1, a)
  double kl_col = 0.0;          // rho^2 * KL(pi^T 1, b)
  double total = 0.0;
  int iterations = 0;
  bool converged = false;
  bool mass_mismatch = false;   // inputs had unequal total mass (debiasing caveat)
};

/// C_ij = lp norm of (x_i - y_j), p in {1,2}. Throws on dimension mismatch.
Eigen::MatrixXd cost_matrix(const WeightedPointSet& x, const WeightedPointSet& y, int p);

/// Largest pairwise ground cost between the two clouds; the natural scale
/// for epsilon/rho choices in tests.
double cost_diameter(const WeightedPointSet& x, const WeightedPointSet& y, int p = 2);

/// Minimizes  <C, pi> + eps^2 KL(pi | a (x) b) + rho^2 KL(pi 1 | a)
///            + rho^2 KL(pi^T 1 | b)   over pi >= 0
/// by damped symmetric log-sum-exp updates on the dual potentials
/// (damping rho^2 / (rho^2 + eps^2)), optionally warm-started through a
/// geometric epsilon-scaling ladder. The returned summary is the objective
/// evaluated on the plan implied by the converged potentials,
///   pi_ij = a_i b_j exp((f_i + g_j - C_ij) / eps^2).
/// Non-convergence is reported, not thrown.
std::pair<TransportSummary, DualPotentials> sinkhorn_unbalanced(const WeightedPointSet& a,
                                                                const WeightedPointSet& b,
                                                                const SinkhornConfig& cfg);

/// OT(a,b) - OT(a,a)/2 - OT(b,b)/2. Zero at a == b by construction.
double debiased_divergence(const WeightedPointSet& a, const WeightedPointSet& b,
                           const SinkhornConfig& cfg);

/// Debiased value plus the three per-solve summaries and potentials,
/// for diagnostics and gradient assembly.
struct DebiasedDetail {
  double value = 0.0;
  TransportSummary cross, self_a, self_b;
  DualPotentials pot_cross, pot_self_a, pot_self_b;
};

DebiasedDetail debiased_divergence_detail(const WeightedPointSet& a, const WeightedPointSet& b,
                                          const SinkhornConfig& cfg);

/// Materializes the plan for given converged potentials. O(N*M) memory.
Eigen::MatrixXd transport_plan(const WeightedPointSet& a, const WeightedPointSet& b,
                               const DualPotentials& potentials, const SinkhornConfig& cfg);

/// Exact row and column sums of a nonnegative plan.
std::pair<Eigen::VectorXd, Eigen::VectorXd> plan_marginals(const Eigen::MatrixXd& plan);

/// Named hyperparameter presets. "linemod-kp" and "occ-kp" are the sparse
/// keypoint settings (epsilon 0.001, rho 0.5), "zebrapose" the dense
/// binary-code setting (epsilon 0.0001, rho 0.1, 8x8 pooling); they differ
/// in the distillation weight used against task losses. Presets enable
/// epsilon-scaling so small-epsilon solves converge quickly.
struct LossPreset {
  const char* name;
  SinkhornConfig cfg;
  double weight;  // distillation-loss weight against task losses
  int block;      // pooling size (dense preset only; 0 otherwise)
};

/// Throws invalid_input for an unknown name.
const LossPreset& preset(std::string_view name);

}  // namespace otkd
