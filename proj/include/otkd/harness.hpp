#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "otkd/losses.hpp"
#include "otkd/predictions.hpp"

namespace otkd {

/// Generative model for a teacher/student pair of keypoint vote clouds in
/// normalized [0,1]^2 image space: tight teacher clusters around the ground
/// truth corners, a looser student, a controllable fraction of low-score
/// teacher outliers, and a controllable overlap between the two cell grids.
struct SyntheticScenario {
  std::uint64_t seed = 1;
  std::array<std::array<double, 2>, 8> gt_corners = default_corners();
  int n_teacher = 20;
  int n_student = 15;
  double sigma_teacher = 0.005;
  double sigma_student_init = 0.05;
  double outlier_fraction = 0.1;  // in [0,1)
  double cell_overlap = 0.5;      // fraction of student cells on teacher cells

  static std::array<std::array<double, 2>, 8> default_corners();
};

/// Free-parameter student: one 2-D vote per (cell, corner) plus one score
/// logit per cell. A minimal trainable stand-in for a network head.
struct StudentModel {
  std::vector<std::array<int, 2>> cells;  // fixed grid coordinates
  Eigen::MatrixXd votes;                  // n_student x (8*2)
  Eigen::VectorXd score_logits;           // n_student

  int num_cells() const { return static_cast<int>(cells.size()); }
};

struct TrajectoryRecord {
  int step = 0;
  double loss = 0.0;
  double divergence = 0.0;    // debiased keypoint loss at the paper preset
  double corner_error = 0.0;  // mean distance of weighted vote centroids to gt
  double wallclock_ms = 0.0;  // 0 unless timing was requested
};

struct DistillTrajectory {
  std::vector<TrajectoryRecord> records;
  bool diverged = false;
  std::string diagnostic;
};

struct TrainOptions {
  LossKind kind = LossKind::ot_keypoint;
  SinkhornConfig cfg;       // transport config for the training loss
  int p_naive = 2;          // norm for the naive loss
  int steps = 500;
  double step_size = 0.2;
  double momentum = 0.9;
  bool timing = false;      // measure real wallclock per step (breaks byte-reproducibility)
};

KeypointPredictionSet generate_teacher(const SyntheticScenario& s);
StudentModel init_student(const SyntheticScenario& s);

/// The student as a prediction set in normalized space (image_size 1x1).
KeypointPredictionSet to_prediction_set(const StudentModel& model);

/// (mean_corner_error, divergence_to_teacher) of a model under a scenario.
std::pair<double, double> evaluate(const StudentModel& model, const SyntheticScenario& s);

/// Momentum descent on the chosen loss with per-step backtracking: a step
/// (including its momentum carry) is only accepted if it does not increase
/// the loss, so the recorded loss sequence is nonincreasing. Records one
/// entry per step, measured before that step's update. Deterministic given
/// the scenario and options (with timing off).
DistillTrajectory train_student(const SyntheticScenario& s, const TrainOptions& opt,
                                StudentModel* final_model = nullptr);

struct SweepRow {
  LossKind kind = LossKind::ot_keypoint;
  double epsilon = 0.0;
  double rho = 0.0;
  double step_size = 0.0;
  int steps = 0;
  double final_loss = 0.0;
  double final_divergence = 0.0;
  double final_corner_error = 0.0;
  bool failed = false;
};

struct SweepGrid {
  std::vector<LossKind> kinds{LossKind::naive, LossKind::ot_keypoint};
  std::vector<double> epsilons{1e-3, 1e-4};
  std::vector<double> rhos{0.1, 0.5, 10.0};
  std::vector<double> step_sizes{0.2};
  int steps = 200;
};

/// One training run per grid point (kind x epsilon x rho x step_size), in
/// parallel across grid points, rows in grid order. Diverged runs are kept
/// as rows with failed = true.
std::vector<SweepRow> sweep(const SyntheticScenario& base, const SweepGrid& grid);

/// CSV serialization. Headers:
///   trajectory: step,loss,divergence,corner_error,wallclock_ms
///   scatter:    role,corner,x,y,weight   (role: teacher|student_init|student_final|gt)
///   sweep:      loss,epsilon,rho,step_size,steps,final_loss,final_divergence,final_corner_error,failed
std::string trajectory_csv(const DistillTrajectory& t);
std::string scatter_csv(const KeypointPredictionSet& teacher, const StudentModel& before,
                        const StudentModel& after, const SyntheticScenario& s);
std::string sweep_csv(const std::vector<SweepRow>& rows);

const char* loss_kind_name(LossKind kind);

}  // namespace otkd
