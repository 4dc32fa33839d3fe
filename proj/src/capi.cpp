#include "otkd/otkd.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "otkd/error.hpp"
#include "otkd/harness.hpp"
#include "otkd/io.hpp"
#include "otkd/losses.hpp"
#include "otkd/exact.hpp"

namespace {

using nlohmann::json;

thread_local std::string g_last_error;

otkd_status map_code(otkd::ErrorCode code) {
  switch (code) {
    case otkd::ErrorCode::invalid_input: return OTKD_ERR_INVALID_INPUT;
    case otkd::ErrorCode::empty_distribution: return OTKD_ERR_EMPTY_DISTRIBUTION;
    case otkd::ErrorCode::unsupported_size: return OTKD_ERR_UNSUPPORTED_SIZE;
    case otkd::ErrorCode::parse_error: return OTKD_ERR_PARSE;
    case otkd::ErrorCode::kind_mismatch: return OTKD_ERR_KIND_MISMATCH;
    case otkd::ErrorCode::io_error: return OTKD_ERR_IO;
  }
  return OTKD_ERR_INTERNAL;
}

template <typename Fn>
otkd_status guarded(Fn&& fn) {
  try {
    fn();
    return OTKD_OK;
  } catch (const otkd::Error& e) {
    g_last_error = e.what();
    return map_code(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return OTKD_ERR_INTERNAL;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

[[noreturn]] void require(const char* what) {
  throw otkd::Error(otkd::ErrorCode::invalid_input, what);
}

otkd::SinkhornConfig config_from(const otkd_loss_options& opt) {
  otkd::SinkhornConfig cfg;
  cfg.epsilon = opt.epsilon;
  cfg.rho = opt.rho;
  cfg.p_exponent = opt.p;
  cfg.debiased = opt.debiased != 0;
  cfg.anneal = opt.anneal != 0;
  cfg.max_iter = opt.max_iter;
  cfg.tol = opt.tol;
  return cfg;
}

otkd::LossOptions loss_options_from(const otkd_loss_options& opt) {
  otkd::LossOptions lo;
  lo.block = opt.block;
  lo.weight_floor = opt.weight_floor;
  lo.coord_scale = opt.coord_scale;
  lo.vote_bound = opt.vote_bound;
  return lo;
}

json summary_to_json(const otkd::TransportSummary& s) {
  return json{{"transport_cost", s.transport_cost},
              {"kl_joint", s.kl_joint},
              {"kl_row", s.kl_row},
              {"kl_col", s.kl_col},
              {"total", s.total},
              {"iterations", s.iterations},
              {"converged", s.converged},
              {"mass_mismatch", s.mass_mismatch}};
}

const char* loss_kind_name(int kind) {
  switch (kind) {
    case OTKD_LOSS_NAIVE: return "naive";
    case OTKD_LOSS_OT_KEYPOINT: return "ot-keypoint";
    case OTKD_LOSS_OT_DENSE: return "ot-dense";
  }
  return "unknown";
}

}  // namespace

struct otkd_predictions {
  otkd::PredictionFile data;
};

extern "C" {

const char* otkd_version(void) { return "0.1.0"; }

const char* otkd_last_error(void) { return g_last_error.c_str(); }

void otkd_string_free(char* s) { std::free(s); }

otkd_status otkd_predictions_from_json(const char* json_text, otkd_predictions** out) {
  return guarded([&] {
    if (!json_text || !out) require("null argument");
    *out = new otkd_predictions{otkd::parse_prediction_json(json_text)};
  });
}

otkd_status otkd_predictions_from_file(const char* path, otkd_predictions** out) {
  return guarded([&] {
    if (!path || !out) require("null argument");
    *out = new otkd_predictions{otkd::load_prediction_file(path)};
  });
}

otkd_status otkd_keypoints_create(int width, int height, int num_keypoints, int n_cells,
                                  const int* cells_xy, const double* scores,
                                  const double* votes, otkd_predictions** out) {
  return guarded([&] {
    if (!cells_xy || !scores || !votes || !out) require("null argument");
    otkd::KeypointPredictionSet set;
    set.image_size = {width, height};
    set.num_keypoints = num_keypoints;
    set.cells.resize(static_cast<std::size_t>(n_cells));
    for (int i = 0; i < n_cells; ++i) {
      auto& cell = set.cells[static_cast<std::size_t>(i)];
      cell.cell_xy = {cells_xy[2 * i], cells_xy[2 * i + 1]};
      cell.score = scores[i];
      cell.votes.resize(static_cast<std::size_t>(num_keypoints));
      for (int k = 0; k < num_keypoints; ++k) {
        const std::size_t offset = (static_cast<std::size_t>(i) * num_keypoints + k) * 2;
        cell.votes[static_cast<std::size_t>(k)] = {votes[offset], votes[offset + 1]};
      }
    }
    otkd::validate(set);
    *out = new otkd_predictions{std::move(set)};
  });
}

otkd_status otkd_dense_create(int grid_w, int grid_h, int code_dim, const double* scores,
                              const double* codes, otkd_predictions** out) {
  return guarded([&] {
    if (!scores || !codes || !out) require("null argument");
    otkd::DenseCodePredictionSet set;
    set.grid_size = {grid_w, grid_h};
    set.code_dim = code_dim;
    const std::size_t n = static_cast<std::size_t>(grid_w) * static_cast<std::size_t>(grid_h);
    set.cells.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      set.cells[i].score = scores[i];
      set.cells[i].code.assign(codes + i * code_dim, codes + (i + 1) * code_dim);
    }
    otkd::validate(set);
    *out = new otkd_predictions{std::move(set)};
  });
}

otkd_status otkd_predictions_kind(const otkd_predictions* p, otkd_prediction_kind* out) {
  return guarded([&] {
    if (!p || !out) require("null argument");
    *out = otkd::is_keypoints(p->data) ? OTKD_PRED_KEYPOINTS : OTKD_PRED_DENSE_CODES;
  });
}

otkd_status otkd_predictions_cell_count(const otkd_predictions* p, int* out) {
  return guarded([&] {
    if (!p || !out) require("null argument");
    *out = otkd::is_keypoints(p->data)
               ? static_cast<int>(std::get<otkd::KeypointPredictionSet>(p->data).cells.size())
               : static_cast<int>(std::get<otkd::DenseCodePredictionSet>(p->data).cells.size());
  });
}

otkd_status otkd_predictions_to_json(const otkd_predictions* p, char** json_out) {
  return guarded([&] {
    if (!p || !json_out) require("null argument");
    *json_out = dup_string(otkd::prediction_to_json(p->data));
  });
}

otkd_status otkd_predictions_save(const otkd_predictions* p, const char* path) {
  return guarded([&] {
    if (!p || !path) require("null argument");
    otkd::save_prediction_file(p->data, path);
  });
}

otkd_status otkd_predictions_normalize(const otkd_predictions* p, otkd_predictions** out) {
  return guarded([&] {
    if (!p || !out) require("null argument");
    if (!otkd::is_keypoints(p->data))
      require("normalize applies to keypoint predictions only");
    *out = new otkd_predictions{
        otkd::normalize_keypoints(std::get<otkd::KeypointPredictionSet>(p->data))};
  });
}

void otkd_predictions_free(otkd_predictions* p) { delete p; }

void otkd_loss_options_init(otkd_loss_options* opt, otkd_loss_kind kind) {
  if (!opt) return;
  *opt = otkd_loss_options{};
  opt->loss_kind = kind;
  const bool dense = (kind == OTKD_LOSS_OT_DENSE);
  opt->epsilon = dense ? 1e-4 : 1e-3;
  opt->rho = dense ? 0.1 : 0.5;
  opt->p = 2;
  opt->debiased = 1;
  opt->anneal = 1;
  opt->max_iter = 5000;
  opt->tol = 1e-6;
  opt->block = 8;
  opt->weight_floor = 1e-6;
  opt->coord_scale = 1.0;
  opt->vote_bound = 10.0;
}

otkd_status otkd_loss_options_preset(otkd_loss_options* opt, const char* name,
                                     double* weight_out) {
  return guarded([&] {
    if (!opt || !name) require("null argument");
    const otkd::LossPreset& p = otkd::preset(name);
    opt->epsilon = p.cfg.epsilon;
    opt->rho = p.cfg.rho;
    opt->p = p.cfg.p_exponent;
    opt->debiased = p.cfg.debiased ? 1 : 0;
    opt->anneal = p.cfg.anneal ? 1 : 0;
    opt->max_iter = p.cfg.max_iter;
    opt->tol = p.cfg.tol;
    if (p.block > 0) opt->block = p.block;
    if (weight_out) *weight_out = p.weight;
  });
}

namespace {

// Evaluates the requested loss; keypoint inputs are normalized by their
// image size on the way in.
otkd::DistillLossReport eval_report(const otkd_predictions& student,
                                    const otkd_predictions& teacher,
                                    const otkd_loss_options& opt) {
  const bool student_kp = otkd::is_keypoints(student.data);
  const bool teacher_kp = otkd::is_keypoints(teacher.data);
  if (student_kp != teacher_kp)
    throw otkd::Error(otkd::ErrorCode::kind_mismatch,
                      "student and teacher predictions have different kinds");
  const otkd::SinkhornConfig cfg = config_from(opt);
  const otkd::LossOptions lo = loss_options_from(opt);
  if (opt.loss_kind == OTKD_LOSS_OT_DENSE) {
    if (student_kp)
      throw otkd::Error(otkd::ErrorCode::kind_mismatch,
                        "ot-dense expects dense_codes inputs");
    return otkd::binary_code_kd_loss(std::get<otkd::DenseCodePredictionSet>(student.data),
                                     std::get<otkd::DenseCodePredictionSet>(teacher.data), cfg,
                                     lo);
  }
  if (!student_kp)
    throw otkd::Error(otkd::ErrorCode::kind_mismatch,
                      std::string(loss_kind_name(opt.loss_kind)) + " expects keypoints inputs");
  const auto s = otkd::normalize_keypoints(std::get<otkd::KeypointPredictionSet>(student.data));
  const auto t = otkd::normalize_keypoints(std::get<otkd::KeypointPredictionSet>(teacher.data));
  if (opt.loss_kind == OTKD_LOSS_NAIVE) return otkd::naive_kd_loss(s, t, opt.p, lo);
  return otkd::keypoint_kd_loss(s, t, cfg, lo);
}

}  // namespace

otkd_status otkd_loss_eval(const otkd_predictions* student, const otkd_predictions* teacher,
                           const otkd_loss_options* opt, double* total_out,
                           int* converged_out, char** json_out) {
  return guarded([&] {
    if (!student || !teacher || !opt) require("null argument");
    const otkd::DistillLossReport report = eval_report(*student, *teacher, *opt);
    if (total_out) *total_out = report.total;
    if (converged_out) *converged_out = report.converged ? 1 : 0;
    if (json_out) {
      json doc{{"loss", loss_kind_name(opt->loss_kind)},
               {"total", report.total},
               {"converged", report.converged},
               {"epsilon", opt->epsilon},
               {"rho", opt->rho},
               {"p", opt->p},
               {"debiased", opt->debiased != 0}};
      if (!report.per_corner.empty()) doc["per_corner"] = report.per_corner;
      if (opt->loss_kind == OTKD_LOSS_NAIVE) doc["matched_cells"] = report.matched_cells;
      if (opt->loss_kind == OTKD_LOSS_OT_DENSE) doc["block"] = opt->block;
      json summaries = json::array();
      for (const auto& s : report.summaries) summaries.push_back(summary_to_json(s));
      doc["summaries"] = summaries;
      *json_out = dup_string(doc.dump(2) + "\n");
    }
  });
}

namespace {

struct GradientBuffers {
  Eigen::MatrixXd d_points;
  Eigen::VectorXd d_weights;
  bool converged = true;
  double total = 0.0;
};

GradientBuffers eval_gradient(const otkd_predictions& student, const otkd_predictions& teacher,
                              const otkd_loss_options& opt) {
  const bool student_kp = otkd::is_keypoints(student.data);
  const bool teacher_kp = otkd::is_keypoints(teacher.data);
  if (student_kp != teacher_kp)
    throw otkd::Error(otkd::ErrorCode::kind_mismatch,
                      "student and teacher predictions have different kinds");
  const otkd::SinkhornConfig cfg = config_from(opt);
  const otkd::LossOptions lo = loss_options_from(opt);
  GradientBuffers out;
  if (opt.loss_kind == OTKD_LOSS_OT_DENSE) {
    if (student_kp)
      throw otkd::Error(otkd::ErrorCode::kind_mismatch,
                        "ot-dense expects dense_codes inputs");
    const auto& s = std::get<otkd::DenseCodePredictionSet>(student.data);
    const auto& t = std::get<otkd::DenseCodePredictionSet>(teacher.data);
    const auto grad = otkd::loss_gradient_dense(s, t, cfg, lo);
    out.d_points = grad.d_points;
    out.d_weights = grad.d_weights;
    out.converged = grad.converged;
    out.total = otkd::binary_code_kd_loss(s, t, cfg, lo).total;
    return out;
  }
  if (!student_kp)
    throw otkd::Error(otkd::ErrorCode::kind_mismatch,
                      std::string(loss_kind_name(opt.loss_kind)) + " expects keypoints inputs");
  const auto s = otkd::normalize_keypoints(std::get<otkd::KeypointPredictionSet>(student.data));
  const auto t = otkd::normalize_keypoints(std::get<otkd::KeypointPredictionSet>(teacher.data));
  const otkd::LossKind kind =
      (opt.loss_kind == OTKD_LOSS_NAIVE) ? otkd::LossKind::naive : otkd::LossKind::ot_keypoint;
  const auto grad = otkd::loss_gradient(kind, s, t, cfg, opt.p, lo);
  out.d_points = grad.d_points;
  out.d_weights = grad.d_weights;
  out.converged = grad.converged;
  out.total = (kind == otkd::LossKind::naive) ? otkd::naive_kd_loss(s, t, opt.p, lo).total
                                              : otkd::keypoint_kd_loss(s, t, cfg, lo).total;
  return out;
}

}  // namespace

otkd_status otkd_loss_gradient(const otkd_predictions* student,
                               const otkd_predictions* teacher,
                               const otkd_loss_options* opt, double* d_points,
                               double* d_weights, double* total_out, int* converged_out) {
  return guarded([&] {
    if (!student || !teacher || !opt) require("null argument");
    const GradientBuffers grad = eval_gradient(*student, *teacher, *opt);
    if (d_points)
      for (Eigen::Index i = 0; i < grad.d_points.rows(); ++i)
        for (Eigen::Index c = 0; c < grad.d_points.cols(); ++c)
          d_points[i * grad.d_points.cols() + c] = grad.d_points(i, c);
    if (d_weights)
      for (Eigen::Index i = 0; i < grad.d_weights.size(); ++i) d_weights[i] = grad.d_weights[i];
    if (total_out) *total_out = grad.total;
    if (converged_out) *converged_out = grad.converged ? 1 : 0;
  });
}

namespace {

double grad_check_impl(const otkd_predictions& student, const otkd_predictions& teacher,
                       const otkd_loss_options& opt_in, double h, double abs_floor) {
  // The envelope gradient is exact at the converged plan, and the difference
  // quotient amplifies the solver residual by 1/h, so the check always runs
  // the solver to certificate depth.
  otkd_loss_options opt = opt_in;
  opt.tol = std::min(opt.tol, 1e-12);
  opt.max_iter = std::max(opt.max_iter, 20000);
  const GradientBuffers grad = eval_gradient(student, teacher, opt);
  auto loss_at = [&](const otkd_predictions& s) {
    return eval_report(s, teacher, opt).total;
  };

  double max_rel = 0.0;
  auto account = [&](double analytic, double fd) {
    const double err = std::abs(analytic - fd);
    if (err <= abs_floor) return;
    max_rel = std::max(max_rel, err / std::max({std::abs(analytic), std::abs(fd), 1e-300}));
  };

  if (otkd::is_keypoints(student.data)) {
    const auto& set = std::get<otkd::KeypointPredictionSet>(student.data);
    // gradients live in normalized vote space; probe there too
    const double w = set.image_size[0];
    const double hgt = set.image_size[1];
    for (std::size_t i = 0; i < set.cells.size(); ++i) {
      for (int k = 0; k < set.num_keypoints; ++k) {
        for (int d = 0; d < 2; ++d) {
          const double scale = (d == 0) ? w : hgt;
          otkd_predictions plus{student.data}, minus{student.data};
          std::get<otkd::KeypointPredictionSet>(plus.data)
              .cells[i].votes[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)] +=
              h * scale;
          std::get<otkd::KeypointPredictionSet>(minus.data)
              .cells[i].votes[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)] -=
              h * scale;
          const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
          account(grad.d_points(static_cast<Eigen::Index>(i), 2 * k + d), fd);
        }
      }
      otkd_predictions plus{student.data}, minus{student.data};
      std::get<otkd::KeypointPredictionSet>(plus.data).cells[i].score += h;
      std::get<otkd::KeypointPredictionSet>(minus.data).cells[i].score -= h;
      const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
      account(grad.d_weights(static_cast<Eigen::Index>(i)), fd);
    }
  } else {
    const auto& set = std::get<otkd::DenseCodePredictionSet>(student.data);
    for (std::size_t i = 0; i < set.cells.size(); ++i) {
      for (int c = 0; c < set.code_dim; ++c) {
        otkd_predictions plus{student.data}, minus{student.data};
        std::get<otkd::DenseCodePredictionSet>(plus.data).cells[i].code[static_cast<std::size_t>(c)] += h;
        std::get<otkd::DenseCodePredictionSet>(minus.data).cells[i].code[static_cast<std::size_t>(c)] -= h;
        const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
        account(grad.d_points(static_cast<Eigen::Index>(i), c), fd);
      }
      otkd_predictions plus{student.data}, minus{student.data};
      std::get<otkd::DenseCodePredictionSet>(plus.data).cells[i].score += h;
      std::get<otkd::DenseCodePredictionSet>(minus.data).cells[i].score -= h;
      const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
      account(grad.d_weights(static_cast<Eigen::Index>(i)), fd);
    }
  }
  return max_rel;
}

otkd_predictions random_keypoint_instance(std::mt19937_64& rng, int max_cells) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> score(0.3, 0.95);
  std::uniform_real_distribution<double> jitter(-0.03, 0.03);
  const auto corners = otkd::SyntheticScenario::default_corners();
  otkd::KeypointPredictionSet set;
  set.image_size = {1, 1};
  set.num_keypoints = 8;
  const int n = 2 + static_cast<int>(rng() % static_cast<unsigned>(max_cells - 1));
  for (int i = 0; i < n; ++i) {
    otkd::KeypointCell cell;
    cell.cell_xy = {i, 0};
    cell.score = score(rng);
    for (int k = 0; k < 8; ++k)
      cell.votes.push_back({corners[static_cast<std::size_t>(k)][0] + jitter(rng),
                            corners[static_cast<std::size_t>(k)][1] + jitter(rng)});
    set.cells.push_back(cell);
  }
  return otkd_predictions{std::move(set)};
}

otkd_predictions random_dense_instance(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> score(0.3, 0.95);
  otkd::DenseCodePredictionSet set;
  set.grid_size = {16, 16};
  set.code_dim = 16;
  for (int i = 0; i < 256; ++i) {
    otkd::DenseCell cell;
    cell.score = score(rng);
    for (int c = 0; c < 16; ++c)
      cell.code.push_back(unit(rng) < 0.5 ? 0.05 + 0.1 * unit(rng) : 0.85 + 0.1 * unit(rng));
    set.cells.push_back(cell);
  }
  return otkd_predictions{std::move(set)};
}

}  // namespace

otkd_status otkd_grad_check(const otkd_predictions* student, const otkd_predictions* teacher,
                            const otkd_loss_options* opt, double h, double abs_floor,
                            double* max_rel_out) {
  return guarded([&] {
    if (!student || !teacher || !opt || !max_rel_out) require("null argument");
    *max_rel_out = grad_check_impl(*student, *teacher, *opt, h, abs_floor);
  });
}

otkd_status otkd_grad_check_random(otkd_loss_kind kind, int n_instances,
                                   unsigned long long seed, const otkd_loss_options* opt,
                                   double h, double abs_floor, double* max_rel_out) {
  return guarded([&] {
    if (!opt || !max_rel_out) require("null argument");
    if (n_instances < 1) require("n_instances must be >= 1");
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int i = 0; i < n_instances; ++i) {
      if (kind == OTKD_LOSS_OT_DENSE) {
        const otkd_predictions student = random_dense_instance(rng);
        const otkd_predictions teacher = random_dense_instance(rng);
        worst = std::max(worst, grad_check_impl(student, teacher, *opt, h, abs_floor));
      } else {
        const otkd_predictions student = random_keypoint_instance(rng, 8);
        const otkd_predictions teacher = random_keypoint_instance(rng, 8);
        worst = std::max(worst, grad_check_impl(student, teacher, *opt, h, abs_floor));
      }
    }
    *max_rel_out = worst;
  });
}

namespace {

otkd::WeightedPointSet oracle_cloud(const otkd_predictions& p, const otkd_loss_options& opt,
                                    int corner, bool raw_weights) {
  otkd::WeightedPointSet cloud;
  if (otkd::is_keypoints(p.data)) {
    const auto set = otkd::normalize_keypoints(std::get<otkd::KeypointPredictionSet>(p.data));
    cloud = otkd::extract_corner_cloud(set, corner);
  } else {
    cloud = otkd::pool_dense(std::get<otkd::DenseCodePredictionSet>(p.data), opt.block,
                             opt.coord_scale);
  }
  return otkd::normalize_weights(cloud,
                                 raw_weights ? otkd::WeightMode::raw : otkd::WeightMode::unit_mass,
                                 opt.weight_floor);
}

}  // namespace

otkd_status otkd_oracle_eval(const otkd_predictions* a, const otkd_predictions* b, int mode,
                             const otkd_loss_options* opt, int corner, int raw_weights,
                             char** json_out) {
  return guarded([&] {
    if (!a || !b || !opt || !json_out) require("null argument");
    const otkd::WeightedPointSet x = oracle_cloud(*a, *opt, corner, raw_weights != 0);
    const otkd::WeightedPointSet y = oracle_cloud(*b, *opt, corner, raw_weights != 0);
    otkd::ExactPlanResult result;
    if (mode == 0) {
      result = otkd::exact_balanced_ot(x, y, opt->p);
    } else if (mode == 1) {
      result = otkd::primal_uot_oracle(x, y, config_from(*opt));
    } else {
      require("mode must be 0 (balanced) or 1 (primal)");
    }
    json plan = json::array();
    for (Eigen::Index i = 0; i < result.plan.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index j = 0; j < result.plan.cols(); ++j) row.push_back(result.plan(i, j));
      plan.push_back(row);
    }
    const json doc{{"mode", mode == 0 ? "balanced" : "primal"},
                   {"value", result.value},
                   {"iterations", result.iterations},
                   {"plan", plan}};
    *json_out = dup_string(doc.dump(2) + "\n");
  });
}

void otkd_scenario_init(otkd_scenario* s) {
  if (!s) return;
  const otkd::SyntheticScenario defaults;
  s->seed = defaults.seed;
  s->n_teacher = defaults.n_teacher;
  s->n_student = defaults.n_student;
  s->sigma_teacher = defaults.sigma_teacher;
  s->sigma_student_init = defaults.sigma_student_init;
  s->outlier_fraction = defaults.outlier_fraction;
  s->cell_overlap = defaults.cell_overlap;
  for (int k = 0; k < 8; ++k) {
    s->gt_corners[2 * k] = defaults.gt_corners[static_cast<std::size_t>(k)][0];
    s->gt_corners[2 * k + 1] = defaults.gt_corners[static_cast<std::size_t>(k)][1];
  }
}

void otkd_train_options_init(otkd_train_options* opt) {
  if (!opt) return;
  const otkd::TrainOptions defaults;
  opt->steps = defaults.steps;
  opt->step_size = defaults.step_size;
  opt->momentum = defaults.momentum;
  opt->epsilon = 1e-3;
  opt->rho = 0.5;
  opt->timing = 0;
}

namespace {

otkd::SyntheticScenario scenario_from(const otkd_scenario& s) {
  otkd::SyntheticScenario out;
  out.seed = s.seed;
  out.n_teacher = s.n_teacher;
  out.n_student = s.n_student;
  out.sigma_teacher = s.sigma_teacher;
  out.sigma_student_init = s.sigma_student_init;
  out.outlier_fraction = s.outlier_fraction;
  out.cell_overlap = s.cell_overlap;
  for (int k = 0; k < 8; ++k)
    out.gt_corners[static_cast<std::size_t>(k)] = {s.gt_corners[2 * k], s.gt_corners[2 * k + 1]};
  return out;
}

otkd::TrainOptions train_options_from(const otkd_train_options& o, otkd::LossKind kind) {
  otkd::TrainOptions opt;
  opt.kind = kind;
  opt.cfg = otkd::preset("linemod-kp").cfg;
  opt.cfg.epsilon = o.epsilon;
  opt.cfg.rho = o.rho;
  opt.steps = o.steps;
  opt.step_size = o.step_size;
  opt.momentum = o.momentum;
  opt.timing = o.timing != 0;
  return opt;
}

void write_file_or_throw(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw otkd::Error(otkd::ErrorCode::io_error, "cannot write '" + path.string() + "'");
  out << content;
  if (!out)
    throw otkd::Error(otkd::ErrorCode::io_error, "write failed for '" + path.string() + "'");
}

json metrics_json(double loss, double divergence, double corner_error) {
  return json{{"loss", loss}, {"divergence", divergence}, {"corner_error", corner_error}};
}

}  // namespace

otkd_status otkd_demo_run(const otkd_scenario* scenario, const otkd_train_options* opt,
                          const char* out_dir, char** json_out) {
  return guarded([&] {
    if (!scenario || !opt || !out_dir) require("null argument");
    const otkd::SyntheticScenario s = scenario_from(*scenario);
    const std::filesystem::path dir(out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);  // best effort; write errors surface below

    const otkd::KeypointPredictionSet teacher = otkd::generate_teacher(s);
    const otkd::StudentModel initial = otkd::init_student(s);
    json summary{{"seed", s.seed},
                 {"n_teacher", s.n_teacher},
                 {"n_student", s.n_student},
                 {"sigma_teacher", s.sigma_teacher},
                 {"sigma_student_init", s.sigma_student_init},
                 {"outlier_fraction", s.outlier_fraction},
                 {"cell_overlap", s.cell_overlap},
                 {"steps", opt->steps},
                 {"step_size", opt->step_size},
                 {"epsilon", opt->epsilon},
                 {"rho", opt->rho}};

    for (const otkd::LossKind kind : {otkd::LossKind::naive, otkd::LossKind::ot_keypoint}) {
      const otkd::TrainOptions train_opt = train_options_from(*opt, kind);
      otkd::StudentModel final_model;
      const otkd::DistillTrajectory traj = otkd::train_student(s, train_opt, &final_model);
      const char* name = otkd::loss_kind_name(kind);
      write_file_or_throw(dir / (std::string("trajectory_") + name + ".csv"),
                          otkd::trajectory_csv(traj));
      write_file_or_throw(dir / (std::string("scatter_") + name + ".csv"),
                          otkd::scatter_csv(teacher, initial, final_model, s));

      const auto [err0, div0] = otkd::evaluate(initial, s);
      const auto [err1, div1] = otkd::evaluate(final_model, s);
      const auto student_final = otkd::to_prediction_set(final_model);
      const double final_loss =
          (kind == otkd::LossKind::naive)
              ? otkd::naive_kd_loss(student_final, teacher, train_opt.p_naive).total
              : otkd::keypoint_kd_loss(student_final, teacher, train_opt.cfg).total;
      summary[name] = {{"initial", metrics_json(traj.records.empty() ? 0.0 : traj.records[0].loss,
                                                div0, err0)},
                       {"final", metrics_json(final_loss, div1, err1)},
                       {"diverged", traj.diverged},
                       {"diagnostic", traj.diagnostic}};
    }

    const std::string text = summary.dump(2) + "\n";
    write_file_or_throw(dir / "summary.json", text);
    if (json_out) *json_out = dup_string(text);
  });
}

otkd_status otkd_sweep_run(const otkd_scenario* scenario, const otkd_train_options* opt,
                           const int* loss_kinds, int n_kinds, const double* epsilons,
                           int n_eps, const double* rhos, int n_rho,
                           const double* step_sizes, int n_steps, char** csv_out) {
  return guarded([&] {
    if (!scenario || !opt || !csv_out) require("null argument");
    otkd::SweepGrid grid;
    if (loss_kinds && n_kinds > 0) {
      grid.kinds.clear();
      for (int i = 0; i < n_kinds; ++i) {
        if (loss_kinds[i] == OTKD_LOSS_NAIVE) grid.kinds.push_back(otkd::LossKind::naive);
        else if (loss_kinds[i] == OTKD_LOSS_OT_KEYPOINT)
          grid.kinds.push_back(otkd::LossKind::ot_keypoint);
        else require("sweep supports naive and ot-keypoint losses");
      }
    }
    if (epsilons && n_eps > 0) grid.epsilons.assign(epsilons, epsilons + n_eps);
    if (rhos && n_rho > 0) grid.rhos.assign(rhos, rhos + n_rho);
    if (step_sizes && n_steps > 0) grid.step_sizes.assign(step_sizes, step_sizes + n_steps);
    grid.steps = opt->steps;
    const auto rows = otkd::sweep(scenario_from(*scenario), grid);
    *csv_out = dup_string(otkd::sweep_csv(rows));
  });
}

} /* extern "C" */
