#pragma once

#include <Eigen/Core>
#include <vector>

#include "otkd/predictions.hpp"
#include "otkd/sinkhorn.hpp"

namespace otkd {

enum class LossKind {
  naive,        // cell-to-cell distance over cells active in both sets
  ot_keypoint,  // per-corner transport alignment of vote clouds
  ot_dense,     // transport alignment of pooled, coordinate-augmented codes
};

/// Extra knobs shared by the distillation losses.
struct LossOptions {
  double weight_floor = 1e-6;  // normalized-weight drop threshold
  double vote_bound = 10.0;    // reject keypoint inputs with |vote| above this
  double coord_scale = 1.0;    // scale of the x/y channels appended to codes
  int block = 8;               // dense pooling size
  double naive_score_threshold = 0.5;  // activity cutoff for the naive loss
};

struct DistillLossReport {
  double total = 0.0;
  std::vector<double> per_corner;           // keypoint losses only
  std::vector<TransportSummary> summaries;  // one per transport solve, in solve order
  int matched_cells = 0;                    // naive loss only
  bool converged = true;                    // every solve converged
};

/// Gradients of a loss with respect to the student inputs.
/// Layout of d_points by kind:
///   naive / ot_keypoint: n_cells x (K*2), vote k at columns 2k, 2k+1
///   ot_dense:            n_cells x code_dim (cells in grid row-major order)
/// d_weights is always per raw student score, with the weight-normalization
/// chain rule applied; rows dropped by the weight floor get exact zeros.
struct LossGradient {
  Eigen::MatrixXd d_points;
  Eigen::VectorXd d_weights;
  bool converged = true;
};

/// Sum of ||vote_s - vote_t||_p over all corners and over the cells whose
/// grid coordinates are active (score >= threshold) in both sets.
/// Disjoint active sets yield total 0 with matched_cells 0.
DistillLossReport naive_kd_loss(const KeypointPredictionSet& student,
                                const KeypointPredictionSet& teacher, int p,
                                const LossOptions& opt = {});

/// Per-corner transport alignment: for each corner k, solves the relaxed
/// transport problem between the student and teacher vote clouds for that
/// corner, with the (shared) unit-mass-normalized segmentation scores as
/// marginals, and sums the K values. Debiased when cfg.debiased.
DistillLossReport keypoint_kd_loss(const KeypointPredictionSet& student,
                                   const KeypointPredictionSet& teacher,
                                   const SinkhornConfig& cfg, const LossOptions& opt = {});

/// Teacher-side precomputation for repeated evaluations against a fixed
/// teacher (training loops): validated set, per-corner clouds and the
/// student-independent self-transport values of the debiased divergence.
struct PreparedTeacher {
  KeypointPredictionSet set;
  std::vector<WeightedPointSet> corner_clouds;
  std::vector<double> self_totals;  // per corner; zeros when not debiased
  std::vector<TransportSummary> self_summaries;
  SinkhornConfig cfg;
  LossOptions opt;
};

PreparedTeacher prepare_teacher(const KeypointPredictionSet& teacher, const SinkhornConfig& cfg,
                                const LossOptions& opt = {});

/// Same value as the two-set overload, reusing the cached teacher terms.
DistillLossReport keypoint_kd_loss(const KeypointPredictionSet& student,
                                   const PreparedTeacher& teacher);

/// Single transport solve between the pooled, coordinate-augmented code
/// clouds of the two dense prediction sets.
DistillLossReport binary_code_kd_loss(const DenseCodePredictionSet& student,
                                      const DenseCodePredictionSet& teacher,
                                      const SinkhornConfig& cfg, const LossOptions& opt = {});

/// Analytic gradients via the envelope argument: the converged plan is held
/// fixed and the transport and KL terms are differentiated through the cost
/// matrix and the student marginals. Debiased losses subtract the student
/// self-term gradients. The teacher is a constant.
LossGradient loss_gradient(LossKind kind, const KeypointPredictionSet& student,
                           const KeypointPredictionSet& teacher, const SinkhornConfig& cfg,
                           int p_naive = 2, const LossOptions& opt = {});

LossGradient loss_gradient_dense(const DenseCodePredictionSet& student,
                                 const DenseCodePredictionSet& teacher,
                                 const SinkhornConfig& cfg, const LossOptions& opt = {});

}  // namespace otkd
