#include "otkd/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "otkd/error.hpp"
#include "otkd/parallel.hpp"

namespace otkd {

namespace {

constexpr int kNumCorners = 8;
constexpr int kGridSide = 32;  // virtual feature-map grid for cell coordinates

// Self-contained splitmix64-based generator: the trajectories must be
// bit-identical across runs and standard-library versions.
struct Rng {
  std::uint64_t state;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  static Rng derive(std::uint64_t seed, std::uint64_t stream) {
    return Rng{mix(seed + 0x9E3779B97F4A7C15ULL * (stream + 1))};
  }

  std::uint64_t next_u64() {
    state += 0x9E3779B97F4A7C15ULL;
    return mix(state);
  }

  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int below(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

  bool have_spare = false;
  double spare = 0.0;
  double normal() {
    if (have_spare) {
      have_spare = false;
      return spare;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    const double theta = 2.0 * M_PI * u2;
    spare = r * std::sin(theta);
    have_spare = true;
    return r * std::cos(theta);
  }
};

// One shared shuffled grid per seed: teacher cells take the head, student
// cells that must not overlap take the tail, so cell_overlap is exact.
std::vector<std::array<int, 2>> shuffled_grid(std::uint64_t seed) {
  std::vector<int> idx(kGridSide * kGridSide);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = Rng::derive(seed, 0);
  for (int i = 0; i < static_cast<int>(idx.size()) - 1; ++i) {
    const int j = i + rng.below(static_cast<int>(idx.size()) - i);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  std::vector<std::array<int, 2>> cells(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i)
    cells[i] = {idx[i] % kGridSide, idx[i] / kGridSide};
  return cells;
}

int outlier_count(const SyntheticScenario& s) {
  return static_cast<int>(std::floor(s.outlier_fraction * s.n_teacher));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_scenario(const SyntheticScenario& s) {
  if (s.n_teacher < 1 || s.n_student < 1) throw_invalid("cell counts must be >= 1");
  if (!(s.sigma_teacher > 0.0) || !(s.sigma_student_init > 0.0))
    throw_invalid("sigmas must be > 0");
  if (s.outlier_fraction < 0.0 || s.outlier_fraction >= 1.0)
    throw_invalid("outlier_fraction must lie in [0,1)");
  if (s.cell_overlap < 0.0 || s.cell_overlap > 1.0)
    throw_invalid("cell_overlap must lie in [0,1]");
  if (s.n_teacher + s.n_student > kGridSide * kGridSide)
    throw_invalid("too many cells for the virtual grid");
}

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double corner_error_of(const StudentModel& model, const SyntheticScenario& s) {
  double error = 0.0;
  double weight_sum = 0.0;
  for (Eigen::Index i = 0; i < model.score_logits.size(); ++i)
    weight_sum += sigmoid(model.score_logits[i]);
  for (int k = 0; k < kNumCorners; ++k) {
    double cx = 0.0, cy = 0.0;
    for (Eigen::Index i = 0; i < model.score_logits.size(); ++i) {
      const double w = sigmoid(model.score_logits[i]);
      cx += w * model.votes(i, 2 * k);
      cy += w * model.votes(i, 2 * k + 1);
    }
    error += std::hypot(cx / weight_sum - s.gt_corners[static_cast<std::size_t>(k)][0],
                        cy / weight_sum - s.gt_corners[static_cast<std::size_t>(k)][1]);
  }
  return error / kNumCorners;
}

}  // namespace

std::array<std::array<double, 2>, 8> SyntheticScenario::default_corners() {
  // a projected-box-like pair of offset squares in [0,1]^2
  return {{{0.30, 0.30},
           {0.70, 0.30},
           {0.70, 0.70},
           {0.30, 0.70},
           {0.38, 0.22},
           {0.78, 0.22},
           {0.78, 0.62},
           {0.38, 0.62}}};
}

KeypointPredictionSet generate_teacher(const SyntheticScenario& s) {
  check_scenario(s);
  const auto grid = shuffled_grid(s.seed);
  Rng rng = Rng::derive(s.seed, 1);

  KeypointPredictionSet set;
  set.image_size = {1, 1};  // normalized space
  set.num_keypoints = kNumCorners;
  set.cells.resize(static_cast<std::size_t>(s.n_teacher));
  for (int i = 0; i < s.n_teacher; ++i) {
    auto& cell = set.cells[static_cast<std::size_t>(i)];
    cell.cell_xy = grid[static_cast<std::size_t>(i)];
    cell.score = rng.uniform(0.7, 1.0);
    cell.votes.resize(kNumCorners);
    for (int k = 0; k < kNumCorners; ++k) {
      cell.votes[static_cast<std::size_t>(k)] = {
          s.gt_corners[static_cast<std::size_t>(k)][0] + s.sigma_teacher * rng.normal(),
          s.gt_corners[static_cast<std::size_t>(k)][1] + s.sigma_teacher * rng.normal()};
    }
  }
  // the first cells become outliers: votes pushed > 10 sigma away, low scores
  const int n_out = outlier_count(s);
  for (int i = 0; i < n_out; ++i) {
    auto& cell = set.cells[static_cast<std::size_t>(i)];
    cell.score = rng.uniform(0.0, 0.3);
    for (int k = 0; k < kNumCorners; ++k) {
      const double mag = (10.0 + 10.0 * rng.uniform()) * s.sigma_teacher;
      const double angle = 2.0 * M_PI * rng.uniform();
      cell.votes[static_cast<std::size_t>(k)][0] += mag * std::cos(angle);
      cell.votes[static_cast<std::size_t>(k)][1] += mag * std::sin(angle);
    }
  }
  return set;
}

StudentModel init_student(const SyntheticScenario& s) {
  check_scenario(s);
  const auto grid = shuffled_grid(s.seed);
  Rng rng = Rng::derive(s.seed, 2);

  const int n_shared = std::clamp(static_cast<int>(std::lround(s.cell_overlap * s.n_student)), 0,
                                  std::min(s.n_student, s.n_teacher));
  const int n_out = outlier_count(s);

  StudentModel model;
  model.cells.resize(static_cast<std::size_t>(s.n_student));
  // shared cells reuse teacher grid positions, preferring non-outlier cells
  // so the naive loss sees matched active pairs; the rest take fresh cells.
  for (int i = 0; i < n_shared; ++i) {
    const int t = (n_out + i) % s.n_teacher;
    model.cells[static_cast<std::size_t>(i)] = grid[static_cast<std::size_t>(t)];
  }
  for (int i = n_shared; i < s.n_student; ++i)
    model.cells[static_cast<std::size_t>(i)] =
        grid[static_cast<std::size_t>(s.n_teacher + (i - n_shared))];

  model.votes.resize(s.n_student, 2 * kNumCorners);
  model.score_logits.resize(s.n_student);
  for (int i = 0; i < s.n_student; ++i) {
    const double score = rng.uniform(0.7, 1.0);
    model.score_logits[i] = std::log(score / (1.0 - score));
    for (int k = 0; k < kNumCorners; ++k) {
      model.votes(i, 2 * k) =
          s.gt_corners[static_cast<std::size_t>(k)][0] + s.sigma_student_init * rng.normal();
      model.votes(i, 2 * k + 1) =
          s.gt_corners[static_cast<std::size_t>(k)][1] + s.sigma_student_init * rng.normal();
    }
  }
  return model;
}

KeypointPredictionSet to_prediction_set(const StudentModel& model) {
  KeypointPredictionSet set;
  set.image_size = {1, 1};
  set.num_keypoints = kNumCorners;
  set.cells.resize(model.cells.size());
  for (std::size_t i = 0; i < model.cells.size(); ++i) {
    auto& cell = set.cells[i];
    cell.cell_xy = model.cells[i];
    cell.score = sigmoid(model.score_logits[static_cast<Eigen::Index>(i)]);
    cell.votes.resize(kNumCorners);
    for (int k = 0; k < kNumCorners; ++k)
      cell.votes[static_cast<std::size_t>(k)] = {
          model.votes(static_cast<Eigen::Index>(i), 2 * k),
          model.votes(static_cast<Eigen::Index>(i), 2 * k + 1)};
  }
  return set;
}

std::pair<double, double> evaluate(const StudentModel& model, const SyntheticScenario& s) {
  const KeypointPredictionSet teacher = generate_teacher(s);
  const double divergence =
      keypoint_kd_loss(to_prediction_set(model), teacher, preset("linemod-kp").cfg).total;
  return {corner_error_of(model, s), divergence};
}

namespace {

bool same_config(const SinkhornConfig& a, const SinkhornConfig& b) {
  return a.epsilon == b.epsilon && a.rho == b.rho && a.p_exponent == b.p_exponent &&
         a.max_iter == b.max_iter && a.tol == b.tol && a.debiased == b.debiased &&
         a.anneal == b.anneal;
}

}  // namespace

DistillTrajectory train_student(const SyntheticScenario& s, const TrainOptions& opt,
                                StudentModel* final_model) {
  if (opt.steps < 1) throw_invalid("steps must be >= 1");
  const KeypointPredictionSet teacher = generate_teacher(s);
  StudentModel model = init_student(s);
  const SinkhornConfig divergence_cfg = preset("linemod-kp").cfg;
  const bool loss_is_divergence =
      opt.kind == LossKind::ot_keypoint && same_config(opt.cfg, divergence_cfg);

  // the teacher is fixed for the whole run: its self-transport terms are
  // computed once
  const bool needs_train_teacher = opt.kind == LossKind::ot_keypoint;
  const PreparedTeacher train_teacher =
      needs_train_teacher ? prepare_teacher(teacher, opt.cfg) : PreparedTeacher{};
  const PreparedTeacher divergence_teacher =
      loss_is_divergence ? PreparedTeacher{} : prepare_teacher(teacher, divergence_cfg);

  auto loss_value = [&](const StudentModel& m) {
    const KeypointPredictionSet set = to_prediction_set(m);
    return (opt.kind == LossKind::naive) ? naive_kd_loss(set, teacher, opt.p_naive).total
                                         : keypoint_kd_loss(set, train_teacher).total;
  };

  DistillTrajectory traj;
  Eigen::MatrixXd v_votes = Eigen::MatrixXd::Zero(model.votes.rows(), model.votes.cols());
  Eigen::VectorXd v_logits = Eigen::VectorXd::Zero(model.score_logits.size());

  const auto start = std::chrono::steady_clock::now();
  auto last_mark = start;

  for (int step = 0; step < opt.steps; ++step) {
    const KeypointPredictionSet set = to_prediction_set(model);
    double loss;
    LossGradient grad;
    if (opt.kind == LossKind::naive) {
      loss = naive_kd_loss(set, teacher, opt.p_naive).total;
      grad = loss_gradient(LossKind::naive, set, teacher, opt.cfg, opt.p_naive);
    } else {
      loss = keypoint_kd_loss(set, train_teacher).total;
      grad = loss_gradient(LossKind::ot_keypoint, set, teacher, opt.cfg);
    }

    TrajectoryRecord rec;
    rec.step = step;
    rec.loss = loss;
    rec.divergence =
        loss_is_divergence ? loss : keypoint_kd_loss(set, divergence_teacher).total;
    rec.corner_error = corner_error_of(model, s);
    if (opt.timing) {
      const auto now = std::chrono::steady_clock::now();
      rec.wallclock_ms = std::chrono::duration<double, std::milli>(now - last_mark).count();
      last_mark = now;
    }
    traj.records.push_back(rec);

    if (!std::isfinite(loss) || !grad.d_points.allFinite() || !grad.d_weights.allFinite()) {
      traj.diverged = true;
      traj.diagnostic = "non-finite loss or gradient at step " + std::to_string(step);
      break;
    }

    // score gradients flow through the logistic reparameterization
    Eigen::VectorXd g_logits(model.score_logits.size());
    for (Eigen::Index i = 0; i < g_logits.size(); ++i) {
      const double sc = sigmoid(model.score_logits[i]);
      g_logits[i] = grad.d_weights[i] * sc * (1.0 - sc);
    }

    // momentum step, halved until it does not increase the loss
    const Eigen::MatrixXd d_votes = opt.momentum * v_votes - opt.step_size * grad.d_points;
    const Eigen::VectorXd d_logits = opt.momentum * v_logits - opt.step_size * g_logits;
    double scale = 1.0;
    bool accepted = false;
    for (int trial = 0; trial < 30; ++trial) {
      StudentModel candidate = model;
      candidate.votes += scale * d_votes;
      candidate.score_logits += scale * d_logits;
      if (loss_value(candidate) <= loss) {
        model = std::move(candidate);
        v_votes = scale * d_votes;
        v_logits = scale * d_logits;
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) {  // stationary at FP resolution: drop the momentum carry
      v_votes.setZero();
      v_logits.setZero();
    }
    if (!model.votes.allFinite() || !model.score_logits.allFinite()) {
      traj.diverged = true;
      traj.diagnostic = "non-finite parameters after step " + std::to_string(step);
      break;
    }
  }

  if (final_model) *final_model = model;
  return traj;
}

std::vector<SweepRow> sweep(const SyntheticScenario& base, const SweepGrid& grid) {
  if (grid.kinds.empty() || grid.epsilons.empty() || grid.rhos.empty() ||
      grid.step_sizes.empty())
    throw_invalid("sweep grid must be nonempty");

  struct Job {
    LossKind kind;
    double eps, rho, step;
  };
  std::vector<Job> jobs;
  for (LossKind kind : grid.kinds)
    for (double eps : grid.epsilons)
      for (double rho : grid.rhos)
        for (double step : grid.step_sizes) jobs.push_back({kind, eps, rho, step});

  std::vector<SweepRow> rows(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t j) {
    const Job& job = jobs[j];
    TrainOptions opt;
    opt.kind = job.kind;
    opt.cfg = preset("linemod-kp").cfg;
    opt.cfg.epsilon = job.eps;
    opt.cfg.rho = job.rho;
    opt.steps = grid.steps;
    opt.step_size = job.step;

    SweepRow row;
    row.kind = job.kind;
    row.epsilon = job.eps;
    row.rho = job.rho;
    row.step_size = job.step;
    row.steps = grid.steps;
    StudentModel final_model;
    const DistillTrajectory traj = train_student(base, opt, &final_model);
    row.failed = traj.diverged;
    if (!traj.records.empty()) row.final_loss = traj.records.back().loss;
    const auto [err, div] = evaluate(final_model, base);
    row.final_corner_error = err;
    row.final_divergence = div;
    rows[j] = row;
  });
  return rows;
}

const char* loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::naive: return "naive";
    case LossKind::ot_keypoint: return "ot-keypoint";
    case LossKind::ot_dense: return "ot-dense";
  }
  return "unknown";
}

std::string trajectory_csv(const DistillTrajectory& t) {
  std::string out = "step,loss,divergence,corner_error,wallclock_ms\n";
  for (const auto& r : t.records) {
    out += std::to_string(r.step);
    out += ',';
    out += format_g17(r.loss);
    out += ',';
    out += format_g17(r.divergence);
    out += ',';
    out += format_g17(r.corner_error);
    out += ',';
    out += format_g17(r.wallclock_ms);
    out += '\n';
  }
  return out;
}

namespace {

void scatter_rows(std::string& out, const char* role, const KeypointPredictionSet& set) {
  for (const auto& cell : set.cells)
    for (int k = 0; k < static_cast<int>(cell.votes.size()); ++k) {
      out += role;
      out += ',';
      out += std::to_string(k);
      out += ',';
      out += format_g17(cell.votes[static_cast<std::size_t>(k)][0]);
      out += ',';
      out += format_g17(cell.votes[static_cast<std::size_t>(k)][1]);
      out += ',';
      out += format_g17(cell.score);
      out += '\n';
    }
}

}  // namespace

std::string scatter_csv(const KeypointPredictionSet& teacher, const StudentModel& before,
                        const StudentModel& after, const SyntheticScenario& s) {
  std::string out = "role,corner,x,y,weight\n";
  scatter_rows(out, "teacher", teacher);
  scatter_rows(out, "student_init", to_prediction_set(before));
  scatter_rows(out, "student_final", to_prediction_set(after));
  for (int k = 0; k < kNumCorners; ++k) {
    out += "gt,";
    out += std::to_string(k);
    out += ',';
    out += format_g17(s.gt_corners[static_cast<std::size_t>(k)][0]);
    out += ',';
    out += format_g17(s.gt_corners[static_cast<std::size_t>(k)][1]);
    out += ",1\n";
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out =
      "loss,epsilon,rho,step_size,steps,final_loss,final_divergence,final_corner_error,failed\n";
  for (const auto& r : rows) {
    out += loss_kind_name(r.kind);
    out += ',';
    out += format_g17(r.epsilon);
    out += ',';
    out += format_g17(r.rho);
    out += ',';
    out += format_g17(r.step_size);
    out += ',';
    out += std::to_string(r.steps);
    out += ',';
    out += format_g17(r.final_loss);
    out += ',';
    out += format_g17(r.final_divergence);
    out += ',';
    out += format_g17(r.final_corner_error);
    out += ',';
    out += r.failed ? "1" : "0";
    out += '\n';
  }
  return out;
}

}  // namespace otkd
