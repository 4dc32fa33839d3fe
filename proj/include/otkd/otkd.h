/* otkd shared-library interface: transport-based distillation losses for
 * local-prediction pose networks behind a plain C ABI, so training loops in
 * any language can evaluate the losses and their gradients through FFI.
 *
 * Conventions:
 *   - every fallible call returns an otkd_status; OTKD_OK is 0
 *   - on failure, otkd_last_error() returns a thread-local message
 *   - objects are opaque handles released with their _free function
 *   - strings returned through char** are heap-allocated; release with
 *     otkd_string_free
 */
#ifndef OTKD_H
#define OTKD_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum otkd_status {
  OTKD_OK = 0,
  OTKD_ERR_INVALID_INPUT = 1,
  OTKD_ERR_EMPTY_DISTRIBUTION = 2,
  OTKD_ERR_UNSUPPORTED_SIZE = 3,
  OTKD_ERR_PARSE = 4,
  OTKD_ERR_KIND_MISMATCH = 5,
  OTKD_ERR_IO = 6,
  OTKD_ERR_INTERNAL = 7
} otkd_status;

typedef enum otkd_loss_kind {
  OTKD_LOSS_NAIVE = 0,
  OTKD_LOSS_OT_KEYPOINT = 1,
  OTKD_LOSS_OT_DENSE = 2
} otkd_loss_kind;

typedef enum otkd_prediction_kind {
  OTKD_PRED_KEYPOINTS = 0,
  OTKD_PRED_DENSE_CODES = 1
} otkd_prediction_kind;

const char* otkd_version(void);

/* Thread-local message for the most recent failure on this thread. */
const char* otkd_last_error(void);

void otkd_string_free(char* s);

/* ------------------------------------------------------------------ */
/* prediction sets                                                     */

typedef struct otkd_predictions otkd_predictions;

/* Parses the JSON prediction-file format ("kind": "keypoints" or
 * "dense_codes"). */
otkd_status otkd_predictions_from_json(const char* json_text, otkd_predictions** out);
otkd_status otkd_predictions_from_file(const char* path, otkd_predictions** out);

/* Keypoint set from flat arrays: cells_xy is 2*n_cells ints, scores is
 * n_cells doubles in [0,1], votes is n_cells*num_keypoints*2 doubles in
 * image coordinates (vote k of cell i at offset (i*num_keypoints + k)*2). */
otkd_status otkd_keypoints_create(int width, int height, int num_keypoints, int n_cells,
                                  const int* cells_xy, const double* scores,
                                  const double* votes, otkd_predictions** out);

/* Dense set from flat arrays: row-major grid of grid_w*grid_h cells, scores
 * one double per cell, codes code_dim doubles per cell. */
otkd_status otkd_dense_create(int grid_w, int grid_h, int code_dim, const double* scores,
                              const double* codes, otkd_predictions** out);

otkd_status otkd_predictions_kind(const otkd_predictions* p, otkd_prediction_kind* out);
otkd_status otkd_predictions_cell_count(const otkd_predictions* p, int* out);

/* Serialization with 17 significant digits; round-trips bit-exactly. */
otkd_status otkd_predictions_to_json(const otkd_predictions* p, char** json_out);
otkd_status otkd_predictions_save(const otkd_predictions* p, const char* path);

/* Divides keypoint votes by the image size (maps into [0,1]^2). */
otkd_status otkd_predictions_normalize(const otkd_predictions* p, otkd_predictions** out);

void otkd_predictions_free(otkd_predictions* p);

/* ------------------------------------------------------------------ */
/* losses                                                              */

typedef struct otkd_loss_options {
  int loss_kind;       /* otkd_loss_kind */
  double epsilon;      /* entropic scale */
  double rho;          /* marginal-relaxation scale */
  int p;               /* ground-cost norm, 1 or 2 */
  int debiased;        /* 1: subtract self-transport terms (default) */
  int anneal;          /* 1: epsilon-scaling schedule (default for presets) */
  int max_iter;
  double tol;
  int block;           /* dense pooling size */
  double weight_floor; /* normalized-score drop threshold */
  double coord_scale;  /* scale of the coordinate channels on dense codes */
  double vote_bound;   /* reject keypoint votes with larger magnitude */
} otkd_loss_options;

/* Fills defaults for the kind (keypoint: epsilon 1e-3, rho 0.5; dense:
 * epsilon 1e-4, rho 0.1, block 8). */
void otkd_loss_options_init(otkd_loss_options* opt, otkd_loss_kind kind);

/* Applies a named preset: "linemod-kp", "occ-kp" or "zebrapose". weight_out
 * (optional) receives the published distillation weight against task
 * losses. */
otkd_status otkd_loss_options_preset(otkd_loss_options* opt, const char* name,
                                     double* weight_out);

/* Evaluates the loss between two prediction sets of matching kind.
 * Keypoint inputs are normalized by their image size internally.
 * total_out and converged_out are optional; json_out (optional) receives the
 * full report (total, per-corner values, matched cell count, solver
 * summaries). */
otkd_status otkd_loss_eval(const otkd_predictions* student, const otkd_predictions* teacher,
                           const otkd_loss_options* opt, double* total_out,
                           int* converged_out, char** json_out);

/* Gradients with respect to the student inputs, envelope-style through the
 * converged plan. Buffer layouts:
 *   keypoints: d_points n_cells*num_keypoints*2 (d/dvote, normalized space),
 *              d_weights n_cells (d/dscore)
 *   dense:     d_points n_cells*code_dim (d/dcode), d_weights n_cells
 * Either buffer may be NULL to skip it. */
otkd_status otkd_loss_gradient(const otkd_predictions* student,
                               const otkd_predictions* teacher,
                               const otkd_loss_options* opt, double* d_points,
                               double* d_weights, double* total_out, int* converged_out);

/* Compares the analytic gradient against central finite differences with
 * step h on every student coordinate and score. max_rel_out receives the
 * worst error max(|an-fd|/max(|an|,|fd|)) over components whose absolute
 * disagreement exceeds abs_floor. */
otkd_status otkd_grad_check(const otkd_predictions* student, const otkd_predictions* teacher,
                            const otkd_loss_options* opt, double h, double abs_floor,
                            double* max_rel_out);

/* Same check over n_instances seeded random instances of the given kind. */
otkd_status otkd_grad_check_random(otkd_loss_kind kind, int n_instances,
                                   unsigned long long seed, const otkd_loss_options* opt,
                                   double h, double abs_floor, double* max_rel_out);

/* ------------------------------------------------------------------ */
/* reference solvers (test oracles, small instances only)              */

/* mode 0: exact balanced transport (simplex, equal masses, <= 32 points per
 * side); mode 1: high-precision primal minimizer of the relaxed objective
 * (<= 6 points per side). Keypoint inputs contribute corner `corner`'s
 * votes; dense inputs are pooled with opt->block. Weights are unit-mass
 * normalized unless raw_weights. json_out receives value, plan and iteration
 * count. */
otkd_status otkd_oracle_eval(const otkd_predictions* a, const otkd_predictions* b, int mode,
                             const otkd_loss_options* opt, int corner, int raw_weights,
                             char** json_out);

/* ------------------------------------------------------------------ */
/* synthetic distillation harness                                      */

typedef struct otkd_scenario {
  unsigned long long seed;
  int n_teacher;
  int n_student;
  double sigma_teacher;
  double sigma_student_init;
  double outlier_fraction; /* in [0,1) */
  double cell_overlap;     /* in [0,1] */
  double gt_corners[16];   /* 8 corners, x0,y0,x1,y1,... in [0,1]^2 */
} otkd_scenario;

void otkd_scenario_init(otkd_scenario* s);

typedef struct otkd_train_options {
  int steps;
  double step_size;
  double momentum;
  double epsilon; /* transport config of the training loss */
  double rho;
  int timing; /* 1: record real per-step wallclock (breaks reproducibility) */
} otkd_train_options;

void otkd_train_options_init(otkd_train_options* opt);

/* Trains one student per loss (naive and ot-keypoint) on the same scenario
 * and writes, under out_dir: trajectory_<loss>.csv, scatter_<loss>.csv and
 * summary.json. json_out (optional) receives the summary document. */
otkd_status otkd_demo_run(const otkd_scenario* scenario, const otkd_train_options* opt,
                          const char* out_dir, char** json_out);

/* One training run per grid point; returns the CSV table. Loss kinds are
 * OTKD_LOSS_NAIVE / OTKD_LOSS_OT_KEYPOINT. */
otkd_status otkd_sweep_run(const otkd_scenario* scenario, const otkd_train_options* opt,
                           const int* loss_kinds, int n_kinds, const double* epsilons,
                           int n_eps, const double* rhos, int n_rho,
                           const double* step_sizes, int n_steps, char** csv_out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* OTKD_H */
