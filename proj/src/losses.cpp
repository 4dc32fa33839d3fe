#include "otkd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "otkd/error.hpp"
#include "otkd/parallel.hpp"

namespace otkd {

namespace {

void check_vote_bound(const KeypointPredictionSet& set, double bound, const char* side) {
  for (const auto& cell : set.cells)
    for (const auto& vote : cell.votes)
      if (std::abs(vote[0]) > bound || std::abs(vote[1]) > bound)
        throw_invalid(std::string(side) +
                      " votes exceed the magnitude bound (un-normalized input?)");
}

void check_same_keypoints(const KeypointPredictionSet& s, const KeypointPredictionSet& t) {
  if (s.num_keypoints != t.num_keypoints)
    throw_invalid("keypoint count mismatch: student " + std::to_string(s.num_keypoints) +
                  " vs teacher " + std::to_string(t.num_keypoints));
}

// Unit-mass normalization of raw scores with the drop floor; composition of
// the two rescalings reduces to score / (sum of kept scores).
struct NormalizedScores {
  std::vector<Eigen::Index> kept;
  Eigen::VectorXd alpha;     // normalized weights, one per kept cell
  double kept_raw_sum = 0.0; // denominator for the gradient chain rule
};

NormalizedScores normalize_scores(const Eigen::VectorXd& scores, double floor, const char* side) {
  NormalizedScores out;
  const double total = scores.sum();
  if (!(total > 0.0)) throw_empty(std::string(side) + " has no cells with positive score");
  for (Eigen::Index i = 0; i < scores.size(); ++i)
    if (scores[i] / total >= floor) out.kept.push_back(i);
  if (out.kept.empty())
    throw_empty(std::string(side) + " has no cells above the weight floor");
  for (Eigen::Index i : out.kept) out.kept_raw_sum += scores[i];
  out.alpha.resize(static_cast<Eigen::Index>(out.kept.size()));
  for (std::size_t r = 0; r < out.kept.size(); ++r)
    out.alpha[static_cast<Eigen::Index>(r)] = scores[out.kept[r]] / out.kept_raw_sum;
  return out;
}

Eigen::VectorXd raw_scores(const KeypointPredictionSet& set) {
  Eigen::VectorXd s(static_cast<Eigen::Index>(set.cells.size()));
  for (Eigen::Index i = 0; i < s.size(); ++i)
    s[i] = set.cells[static_cast<std::size_t>(i)].score;
  return s;
}

WeightedPointSet corner_cloud(const KeypointPredictionSet& set, const NormalizedScores& ns,
                              int k) {
  WeightedPointSet out;
  out.points.resize(static_cast<Eigen::Index>(ns.kept.size()), 2);
  out.weights = ns.alpha;
  for (std::size_t r = 0; r < ns.kept.size(); ++r) {
    const auto& vote = set.cells[static_cast<std::size_t>(ns.kept[r])].votes[static_cast<std::size_t>(k)];
    out.points(static_cast<Eigen::Index>(r), 0) = vote[0];
    out.points(static_cast<Eigen::Index>(r), 1) = vote[1];
  }
  return out;
}

// d/ds of a loss whose gradient w.r.t. the normalized weights alpha = s / S
// is g: dL/ds_m = (g_m - sum_k alpha_k g_k) / S for kept cells, 0 for dropped.
Eigen::VectorXd chain_weight_normalization(const Eigen::VectorXd& g, const NormalizedScores& ns,
                                           Eigen::Index n_cells) {
  const double weighted_mean = ns.alpha.dot(g);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n_cells);
  for (std::size_t r = 0; r < ns.kept.size(); ++r)
    out[ns.kept[r]] = (g[static_cast<Eigen::Index>(r)] - weighted_mean) / ns.kept_raw_sum;
  return out;
}

// Envelope gradients of one relaxed transport solve with the plan held at
// its converged value: through the cost matrix for the points, through the
// KL terms for the marginal weights.
struct SolveGradients {
  Eigen::MatrixXd d_x, d_y;
  Eigen::VectorXd d_a, d_b;
};

SolveGradients solve_gradients(const WeightedPointSet& a, const WeightedPointSet& b,
                               const DualPotentials& pot, const SinkhornConfig& cfg) {
  const Eigen::Index n = a.size();
  const Eigen::Index m = b.size();
  const Eigen::Index d = a.dim();
  const Eigen::MatrixXd cost = cost_matrix(a, b, cfg.p_exponent);
  const double eps_hat = cfg.epsilon * cfg.epsilon;
  const double rho_hat = cfg.rho * cfg.rho;

  SolveGradients out;
  out.d_x.setZero(n, d);
  out.d_y.setZero(m, d);
  out.d_a.setZero(n);
  out.d_b.setZero(m);

  Eigen::VectorXd row_sum = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd col_sum = Eigen::VectorXd::Zero(m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double pij = a.weights[i] * b.weights[j] *
                         std::exp((pot.f[i] + pot.g[j] - cost(i, j)) / eps_hat);
      row_sum[i] += pij;
      col_sum[j] += pij;
      const Eigen::RowVectorXd diff = a.points.row(i) - b.points.row(j);
      Eigen::RowVectorXd dc(d);
      if (cfg.p_exponent == 2) {
        const double norm = cost(i, j);
        dc = (norm > 0.0) ? (diff / norm).eval() : Eigen::RowVectorXd::Zero(d).eval();
      } else {
        for (Eigen::Index c = 0; c < d; ++c)
          dc[c] = (diff[c] > 0.0) ? 1.0 : (diff[c] < 0.0 ? -1.0 : 0.0);
      }
      out.d_x.row(i) += pij * dc;
      out.d_y.row(j) -= pij * dc;
    }
  }
  const double mass_a = a.weights.sum();
  const double mass_b = b.weights.sum();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ratio = row_sum[i] / a.weights[i];
    out.d_a[i] = eps_hat * (mass_b - ratio) + rho_hat * (1.0 - ratio);
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    const double ratio = col_sum[j] / b.weights[j];
    out.d_b[j] = eps_hat * (mass_a - ratio) + rho_hat * (1.0 - ratio);
  }
  return out;
}

// Loss value and gradients (w.r.t. the student cloud) of one corner solve.
struct CornerResult {
  double value = 0.0;
  Eigen::MatrixXd d_points;  // kept_s x 2
  Eigen::VectorXd d_alpha;   // kept_s
  std::vector<TransportSummary> summaries;
  bool converged = true;
  bool with_grad = false;
};

// cached_self, when given, supplies the student-independent teacher
// self-transport summary so only two solves are needed; a pure gradient
// evaluation (with_grad && !need_value) skips the teacher self term
// entirely, since the teacher is constant.
CornerResult solve_corner(const WeightedPointSet& x, const WeightedPointSet& y,
                          const SinkhornConfig& cfg, bool with_grad, bool need_value,
                          const TransportSummary* cached_self) {
  CornerResult res;
  res.with_grad = with_grad;
  if (!cfg.debiased) {
    auto [summary, pot] = sinkhorn_unbalanced(x, y, cfg);
    res.value = summary.total;
    res.summaries = {summary};
    res.converged = summary.converged;
    if (with_grad) {
      const SolveGradients cross = solve_gradients(x, y, pot, cfg);
      res.d_points = cross.d_x;
      res.d_alpha = cross.d_a;
    }
    return res;
  }

  auto [cross, pot_cross] = sinkhorn_unbalanced(x, y, cfg);
  auto [self_a, pot_a] = sinkhorn_unbalanced(x, x, cfg);
  res.summaries = {cross, self_a};
  res.converged = cross.converged && self_a.converged;
  double self_b_total = 0.0;
  if (cached_self) {
    res.summaries.push_back(*cached_self);
    res.converged = res.converged && cached_self->converged;
    self_b_total = cached_self->total;
  } else if (need_value) {
    auto [self_b, pot_b] = sinkhorn_unbalanced(y, y, cfg);
    res.summaries.push_back(self_b);
    res.converged = res.converged && self_b.converged;
    self_b_total = self_b.total;
  }
  res.value = cross.total - 0.5 * self_a.total - 0.5 * self_b_total;
  if (with_grad) {
    const SolveGradients cross_grad = solve_gradients(x, y, pot_cross, cfg);
    const SolveGradients self_grad = solve_gradients(x, x, pot_a, cfg);
    res.d_points = cross_grad.d_x - 0.5 * (self_grad.d_x + self_grad.d_y);
    res.d_alpha = cross_grad.d_a - 0.5 * (self_grad.d_a + self_grad.d_b);
  }
  return res;
}

struct KeypointPipeline {
  NormalizedScores student, teacher;
  std::vector<CornerResult> corners;
};

KeypointPipeline run_keypoint_pipeline(const KeypointPredictionSet& s,
                                       const KeypointPredictionSet& t,
                                       const SinkhornConfig& cfg, const LossOptions& opt,
                                       bool with_grad) {
  validate(s);
  validate(t);
  check_same_keypoints(s, t);
  check_vote_bound(s, opt.vote_bound, "student");
  check_vote_bound(t, opt.vote_bound, "teacher");

  KeypointPipeline pipe;
  pipe.student = normalize_scores(raw_scores(s), opt.weight_floor, "student");
  pipe.teacher = normalize_scores(raw_scores(t), opt.weight_floor, "teacher");
  pipe.corners.resize(static_cast<std::size_t>(s.num_keypoints));
  parallel_for(static_cast<std::size_t>(s.num_keypoints), [&](std::size_t k) {
    const WeightedPointSet x = corner_cloud(s, pipe.student, static_cast<int>(k));
    const WeightedPointSet y = corner_cloud(t, pipe.teacher, static_cast<int>(k));
    pipe.corners[k] = solve_corner(x, y, cfg, with_grad, !with_grad, nullptr);
  });
  return pipe;
}

void check_duplicate_cells(const KeypointPredictionSet& set, const char* side) {
  std::map<std::pair<int, int>, int> seen;
  for (const auto& cell : set.cells)
    if (++seen[{cell.cell_xy[0], cell.cell_xy[1]}] > 1)
      throw_invalid(std::string(side) + " repeats grid cell (" +
                    std::to_string(cell.cell_xy[0]) + "," + std::to_string(cell.cell_xy[1]) + ")");
}

struct MatchedCells {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // student, teacher indices
};

MatchedCells match_active_cells(const KeypointPredictionSet& s, const KeypointPredictionSet& t,
                                double threshold) {
  check_duplicate_cells(s, "student");
  check_duplicate_cells(t, "teacher");
  std::map<std::pair<int, int>, std::size_t> teacher_at;
  for (std::size_t j = 0; j < t.cells.size(); ++j)
    if (t.cells[j].score >= threshold)
      teacher_at[{t.cells[j].cell_xy[0], t.cells[j].cell_xy[1]}] = j;
  MatchedCells out;
  for (std::size_t i = 0; i < s.cells.size(); ++i) {
    if (s.cells[i].score < threshold) continue;
    const auto it = teacher_at.find({s.cells[i].cell_xy[0], s.cells[i].cell_xy[1]});
    if (it != teacher_at.end()) out.pairs.emplace_back(i, it->second);
  }
  return out;
}

double vote_norm(const std::array<double, 2>& a, const std::array<double, 2>& b, int p) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  return (p == 2) ? std::hypot(dx, dy) : std::abs(dx) + std::abs(dy);
}

struct DensePipeline {
  WeightedPointSet pooled_s, pooled_t;      // pooled clouds before weight normalization
  NormalizedScores ns_s, ns_t;              // over pooled weights
  WeightedPointSet x, y;                    // solver inputs (kept rows, normalized weights)
  CornerResult solve;
};

DensePipeline run_dense_pipeline(const DenseCodePredictionSet& s, const DenseCodePredictionSet& t,
                                 const SinkhornConfig& cfg, const LossOptions& opt,
                                 bool with_grad) {
  if (s.grid_size != t.grid_size)
    throw_invalid("grid_size mismatch between student and teacher");
  if (s.code_dim != t.code_dim) throw_invalid("code_dim mismatch between student and teacher");

  DensePipeline pipe;
  pipe.pooled_s = pool_dense(s, opt.block, opt.coord_scale);
  pipe.pooled_t = pool_dense(t, opt.block, opt.coord_scale);
  pipe.ns_s = normalize_scores(pipe.pooled_s.weights, opt.weight_floor, "student");
  pipe.ns_t = normalize_scores(pipe.pooled_t.weights, opt.weight_floor, "teacher");

  auto gather = [](const WeightedPointSet& pooled, const NormalizedScores& ns) {
    WeightedPointSet out;
    out.points.resize(static_cast<Eigen::Index>(ns.kept.size()), pooled.dim());
    out.weights = ns.alpha;
    for (std::size_t r = 0; r < ns.kept.size(); ++r)
      out.points.row(static_cast<Eigen::Index>(r)) = pooled.points.row(ns.kept[r]);
    return out;
  };
  pipe.x = gather(pipe.pooled_s, pipe.ns_s);
  pipe.y = gather(pipe.pooled_t, pipe.ns_t);
  pipe.solve = solve_corner(pipe.x, pipe.y, cfg, with_grad, !with_grad, nullptr);
  return pipe;
}

}  // namespace

DistillLossReport naive_kd_loss(const KeypointPredictionSet& student,
                                const KeypointPredictionSet& teacher, int p,
                                const LossOptions& opt) {
  validate(student);
  validate(teacher);
  check_same_keypoints(student, teacher);
  check_vote_bound(student, opt.vote_bound, "student");
  check_vote_bound(teacher, opt.vote_bound, "teacher");
  if (p != 1 && p != 2) throw_invalid("norm exponent must be 1 or 2");

  const MatchedCells matched = match_active_cells(student, teacher, opt.naive_score_threshold);
  DistillLossReport report;
  report.per_corner.assign(static_cast<std::size_t>(student.num_keypoints), 0.0);
  for (const auto& [si, tj] : matched.pairs)
    for (int k = 0; k < student.num_keypoints; ++k)
      report.per_corner[static_cast<std::size_t>(k)] +=
          vote_norm(student.cells[si].votes[static_cast<std::size_t>(k)],
                    teacher.cells[tj].votes[static_cast<std::size_t>(k)], p);
  for (double v : report.per_corner) report.total += v;
  report.matched_cells = static_cast<int>(matched.pairs.size());
  return report;
}

DistillLossReport keypoint_kd_loss(const KeypointPredictionSet& student,
                                   const KeypointPredictionSet& teacher,
                                   const SinkhornConfig& cfg, const LossOptions& opt) {
  const KeypointPipeline pipe = run_keypoint_pipeline(student, teacher, cfg, opt, false);
  DistillLossReport report;
  for (const auto& corner : pipe.corners) {
    report.per_corner.push_back(corner.value);
    report.total += corner.value;
    report.converged = report.converged && corner.converged;
    report.summaries.insert(report.summaries.end(), corner.summaries.begin(),
                            corner.summaries.end());
  }
  return report;
}

PreparedTeacher prepare_teacher(const KeypointPredictionSet& teacher, const SinkhornConfig& cfg,
                                const LossOptions& opt) {
  validate(teacher);
  check_vote_bound(teacher, opt.vote_bound, "teacher");
  PreparedTeacher prepared;
  prepared.set = teacher;
  prepared.cfg = cfg;
  prepared.opt = opt;
  const NormalizedScores scores = normalize_scores(raw_scores(teacher), opt.weight_floor,
                                                   "teacher");
  prepared.corner_clouds.resize(static_cast<std::size_t>(teacher.num_keypoints));
  prepared.self_totals.assign(static_cast<std::size_t>(teacher.num_keypoints), 0.0);
  prepared.self_summaries.resize(static_cast<std::size_t>(teacher.num_keypoints));
  parallel_for(static_cast<std::size_t>(teacher.num_keypoints), [&](std::size_t k) {
    prepared.corner_clouds[k] = corner_cloud(teacher, scores, static_cast<int>(k));
    if (cfg.debiased) {
      auto [summary, pot] =
          sinkhorn_unbalanced(prepared.corner_clouds[k], prepared.corner_clouds[k], cfg);
      prepared.self_summaries[k] = summary;
      prepared.self_totals[k] = summary.total;
    }
  });
  return prepared;
}

DistillLossReport keypoint_kd_loss(const KeypointPredictionSet& student,
                                   const PreparedTeacher& teacher) {
  validate(student);
  check_same_keypoints(student, teacher.set);
  check_vote_bound(student, teacher.opt.vote_bound, "student");
  const NormalizedScores scores =
      normalize_scores(raw_scores(student), teacher.opt.weight_floor, "student");

  std::vector<CornerResult> corners(static_cast<std::size_t>(student.num_keypoints));
  parallel_for(static_cast<std::size_t>(student.num_keypoints), [&](std::size_t k) {
    const WeightedPointSet x = corner_cloud(student, scores, static_cast<int>(k));
    const TransportSummary* cached =
        teacher.cfg.debiased ? &teacher.self_summaries[k] : nullptr;
    corners[k] = solve_corner(x, teacher.corner_clouds[k], teacher.cfg, false, true, cached);
  });

  DistillLossReport report;
  for (const auto& corner : corners) {
    report.per_corner.push_back(corner.value);
    report.total += corner.value;
    report.converged = report.converged && corner.converged;
    report.summaries.insert(report.summaries.end(), corner.summaries.begin(),
                            corner.summaries.end());
  }
  return report;
}

DistillLossReport binary_code_kd_loss(const DenseCodePredictionSet& student,
                                      const DenseCodePredictionSet& teacher,
                                      const SinkhornConfig& cfg, const LossOptions& opt) {
  const DensePipeline pipe = run_dense_pipeline(student, teacher, cfg, opt, false);
  DistillLossReport report;
  report.total = pipe.solve.value;
  report.summaries = pipe.solve.summaries;
  report.converged = pipe.solve.converged;
  return report;
}

LossGradient loss_gradient(LossKind kind, const KeypointPredictionSet& student,
                           const KeypointPredictionSet& teacher, const SinkhornConfig& cfg,
                           int p_naive, const LossOptions& opt) {
  const Eigen::Index n = static_cast<Eigen::Index>(student.cells.size());
  const int K = student.num_keypoints;
  LossGradient grad;
  grad.d_points.setZero(n, 2 * K);
  grad.d_weights.setZero(n);

  if (kind == LossKind::naive) {
    validate(student);
    validate(teacher);
    check_same_keypoints(student, teacher);
    const MatchedCells matched = match_active_cells(student, teacher, opt.naive_score_threshold);
    for (const auto& [si, tj] : matched.pairs) {
      for (int k = 0; k < K; ++k) {
        const auto& vs = student.cells[si].votes[static_cast<std::size_t>(k)];
        const auto& vt = teacher.cells[tj].votes[static_cast<std::size_t>(k)];
        const double dx = vs[0] - vt[0];
        const double dy = vs[1] - vt[1];
        double gx = 0.0, gy = 0.0;
        if (p_naive == 2) {
          const double norm = std::hypot(dx, dy);
          if (norm > 0.0) {
            gx = dx / norm;
            gy = dy / norm;
          }
        } else {
          gx = (dx > 0.0) ? 1.0 : (dx < 0.0 ? -1.0 : 0.0);
          gy = (dy > 0.0) ? 1.0 : (dy < 0.0 ? -1.0 : 0.0);
        }
        grad.d_points(static_cast<Eigen::Index>(si), 2 * k) += gx;
        grad.d_points(static_cast<Eigen::Index>(si), 2 * k + 1) += gy;
      }
    }
    return grad;
  }
  if (kind != LossKind::ot_keypoint)
    throw_invalid("loss_gradient over keypoint sets expects naive or ot-keypoint");

  const KeypointPipeline pipe = run_keypoint_pipeline(student, teacher, cfg, opt, true);
  Eigen::VectorXd d_alpha = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(pipe.student.kept.size()));
  for (int k = 0; k < K; ++k) {
    const CornerResult& corner = pipe.corners[static_cast<std::size_t>(k)];
    grad.converged = grad.converged && corner.converged;
    d_alpha += corner.d_alpha;
    for (std::size_t r = 0; r < pipe.student.kept.size(); ++r) {
      grad.d_points(pipe.student.kept[r], 2 * k) += corner.d_points(static_cast<Eigen::Index>(r), 0);
      grad.d_points(pipe.student.kept[r], 2 * k + 1) +=
          corner.d_points(static_cast<Eigen::Index>(r), 1);
    }
  }
  grad.d_weights = chain_weight_normalization(d_alpha, pipe.student, n);
  return grad;
}

LossGradient loss_gradient_dense(const DenseCodePredictionSet& student,
                                 const DenseCodePredictionSet& teacher,
                                 const SinkhornConfig& cfg, const LossOptions& opt) {
  const DensePipeline pipe = run_dense_pipeline(student, teacher, cfg, opt, true);
  const int wg = student.grid_size[0];
  const int hg = student.grid_size[1];
  const int d = student.code_dim;
  const int block = opt.block;
  const int tiles_x = wg / block;
  const double inv_count = 1.0 / (static_cast<double>(block) * static_cast<double>(block));

  LossGradient grad;
  grad.d_points.setZero(static_cast<Eigen::Index>(wg) * hg, d);
  grad.d_weights.setZero(static_cast<Eigen::Index>(wg) * hg);
  grad.converged = pipe.solve.converged;

  const Eigen::VectorXd d_pooled_w = chain_weight_normalization(
      pipe.solve.d_alpha, pipe.ns_s, pipe.pooled_s.size());

  for (std::size_t r = 0; r < pipe.ns_s.kept.size(); ++r) {
    const Eigen::Index tile = pipe.ns_s.kept[r];
    const int tx = static_cast<int>(tile) % tiles_x;
    const int ty = static_cast<int>(tile) / tiles_x;
    for (int dy = 0; dy < block; ++dy) {
      for (int dx = 0; dx < block; ++dx) {
        const Eigen::Index cell =
            static_cast<Eigen::Index>(ty * block + dy) * wg + (tx * block + dx);
        grad.d_points.row(cell) =
            inv_count * pipe.solve.d_points.row(static_cast<Eigen::Index>(r)).head(d);
        grad.d_weights[cell] = inv_count * d_pooled_w[tile];
      }
    }
  }
  return grad;
}

}  // namespace otkd
