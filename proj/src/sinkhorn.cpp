#include "otkd/sinkhorn.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "otkd/error.hpp"

namespace otkd {

namespace {

// softmin over columns of one row of Z: -eps_hat * log sum_j exp(z_j)
// with z_j = logw_j + (h_j - C_ij) / eps_hat, max-shifted for stability.
void softmin_rows(const Eigen::MatrixXd& cost, const Eigen::VectorXd& logw,
                  const Eigen::VectorXd& h, double eps_hat, Eigen::VectorXd& out,
                  Eigen::VectorXd& z) {
  const Eigen::Index n = cost.rows();
  const Eigen::Index m = cost.cols();
  for (Eigen::Index i = 0; i < n; ++i) {
    double zmax = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m; ++j) {
      z[j] = logw[j] + (h[j] - cost(i, j)) / eps_hat;
      if (z[j] > zmax) zmax = z[j];
    }
    double acc = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) acc += std::exp(z[j] - zmax);
    out[i] = -eps_hat * (zmax + std::log(acc));
  }
}

void softmin_cols(const Eigen::MatrixXd& cost, const Eigen::VectorXd& logw,
                  const Eigen::VectorXd& h, double eps_hat, Eigen::VectorXd& out,
                  Eigen::VectorXd& z) {
  const Eigen::Index n = cost.rows();
  const Eigen::Index m = cost.cols();
  for (Eigen::Index j = 0; j < m; ++j) {
    double zmax = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
      z[i] = logw[i] + (h[i] - cost(i, j)) / eps_hat;
      if (z[i] > zmax) zmax = z[i];
    }
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) acc += std::exp(z[i] - zmax);
    out[j] = -eps_hat * (zmax + std::log(acc));
  }
}

struct DualSolve {
  Eigen::VectorXd f, g;
  int iterations = 0;
  bool converged = false;
};

// Primal objective of the plan implied by (f, g) and the dual objective of
// (f, g) itself. The gap between them certifies convergence: both bracket
// the optimum, so gap <= tol * scale means the returned value is trustworthy
// at tol, which no potential-movement test can guarantee (the iteration can
// sit on long metastable plateaus, and near-degenerate dual directions keep
// potentials drifting after the plan has settled).
struct Bracket {
  double primal = 0.0;
  double dual = 0.0;
};

Bracket primal_dual_bracket(const Eigen::MatrixXd& cost, const Eigen::VectorXd& a,
                            const Eigen::VectorXd& b, const Eigen::VectorXd& log_a,
                            const Eigen::VectorXd& log_b, const Eigen::VectorXd& f,
                            const Eigen::VectorXd& g, double eps_hat, double rho_hat) {
  const Eigen::Index n = cost.rows();
  const Eigen::Index m = cost.cols();
  Eigen::VectorXd row_sum = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd col_sum = Eigen::VectorXd::Zero(m);
  double transport = 0.0, entropic = 0.0, mass = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      const double expo = (f[i] + g[j] - cost(i, j)) / eps_hat;
      const double pij = std::exp(log_a[i] + log_b[j] + expo);
      row_sum[i] += pij;
      col_sum[j] += pij;
      mass += pij;
      transport += pij * cost(i, j);
      entropic += pij * (eps_hat * expo);
    }
  double kl_row = 0.0, kl_col = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    kl_row += (row_sum[i] > 0.0)
                  ? row_sum[i] * std::log(row_sum[i] / a[i]) - row_sum[i] + a[i]
                  : a[i];
  for (Eigen::Index j = 0; j < m; ++j)
    kl_col += (col_sum[j] > 0.0)
                  ? col_sum[j] * std::log(col_sum[j] / b[j]) - col_sum[j] + b[j]
                  : b[j];
  Bracket out;
  const double mass_product = a.sum() * b.sum();
  out.primal = transport + entropic - eps_hat * mass + eps_hat * mass_product +
               rho_hat * (kl_row + kl_col);
  // D(f,g) = -rho^2 <a, e^{-f/rho^2}-1> - rho^2 <b, e^{-g/rho^2}-1>
  //          - eps^2 (mass(f,g) - m_a m_b); exponents clamped so a wild
  //          iterate only defers the certificate, never overflows.
  double dual = -eps_hat * (mass - mass_product);
  for (Eigen::Index i = 0; i < n; ++i)
    dual -= rho_hat * a[i] * std::expm1(std::min(-f[i] / rho_hat, 700.0));
  for (Eigen::Index j = 0; j < m; ++j)
    dual -= rho_hat * b[j] * std::expm1(std::min(-g[j] / rho_hat, 700.0));
  out.dual = dual;
  return out;
}

// Next power of two >= v; keeps the annealing ladder locally constant in the
// inputs so the loss stays a smooth function of the points.
double pow2_at_least(double v) {
  if (!(v > 0.0)) return 1.0;
  return std::exp2(std::ceil(std::log2(v)));
}

bool gap_within(const Bracket& bracket, double tol) {
  return bracket.primal - bracket.dual <=
         tol * std::max({std::abs(bracket.primal), std::abs(bracket.dual), 1e-300});
}

// Newton ascent on the strictly concave dual, warm-started by the scaling
// iterations. The damped updates equilibrate mass between the clusters of
// the plan's support graph at a rate of about eps^2/rho^2 per sweep, which
// stalls for small blur; the Newton system resolves those directions in a
// handful of steps whatever the eps/rho ratio. Stops once the primal-dual
// gap certifies the value (or no ascent is possible).
void newton_polish(const Eigen::MatrixXd& cost, const Eigen::VectorXd& a,
                   const Eigen::VectorXd& b, const Eigen::VectorXd& log_a,
                   const Eigen::VectorXd& log_b, double eps_hat, double rho_hat,
                   const SinkhornConfig& cfg, DualSolve& s) {
  const Eigen::Index n = cost.rows();
  const Eigen::Index m = cost.cols();

  auto dual_of = [&](const Eigen::VectorXd& f, const Eigen::VectorXd& g) {
    double mass = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m; ++j)
        mass += std::exp(log_a[i] + log_b[j] +
                         std::min((f[i] + g[j] - cost(i, j)) / eps_hat, 700.0));
    double dual = -eps_hat * (mass - a.sum() * b.sum());
    for (Eigen::Index i = 0; i < n; ++i)
      dual -= rho_hat * a[i] * std::expm1(std::min(-f[i] / rho_hat, 700.0));
    for (Eigen::Index j = 0; j < m; ++j)
      dual -= rho_hat * b[j] * std::expm1(std::min(-g[j] / rho_hat, 700.0));
    return dual;
  };

  constexpr int kMaxSteps = 80;
  double dual = dual_of(s.f, s.g);
  double tau = 0.0;  // Levenberg damping: the Hessian degenerates like
                     // eps^2/rho^2 along the translation mode in the stiff
                     // balanced limit, so raw Newton directions can blow up
  for (int step = 0; step < kMaxSteps; ++step) {
    const Bracket bracket =
        primal_dual_bracket(cost, a, b, log_a, log_b, s.f, s.g, eps_hat, rho_hat);
    if (gap_within(bracket, cfg.tol)) {
      s.converged = true;
      return;
    }

    Eigen::VectorXd row_sum = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd col_sum = Eigen::VectorXd::Zero(m);
    Eigen::MatrixXd plan(n, m);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m; ++j) {
        const double pij = std::exp(log_a[i] + log_b[j] +
                                    std::min((s.f[i] + s.g[j] - cost(i, j)) / eps_hat, 700.0));
        plan(i, j) = pij;
        row_sum[i] += pij;
        col_sum[j] += pij;
      }

    // grad D = (a e^{-f/rho^2} - r,  b e^{-g/rho^2} - c);  -Hess is SPD
    Eigen::VectorXd af(n), bg(m);
    for (Eigen::Index i = 0; i < n; ++i)
      af[i] = a[i] * std::exp(std::min(-s.f[i] / rho_hat, 700.0));
    for (Eigen::Index j = 0; j < m; ++j)
      bg[j] = b[j] * std::exp(std::min(-s.g[j] / rho_hat, 700.0));
    Eigen::VectorXd grad(n + m);
    grad.head(n) = af - row_sum;
    grad.tail(m) = bg - col_sum;

    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n + m, n + m);
    for (Eigen::Index i = 0; i < n; ++i) H(i, i) = af[i] / rho_hat + row_sum[i] / eps_hat;
    for (Eigen::Index j = 0; j < m; ++j)
      H(n + j, n + j) = bg[j] / rho_hat + col_sum[j] / eps_hat;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m; ++j) {
        H(i, n + j) = plan(i, j) / eps_hat;
        H(n + j, i) = plan(i, j) / eps_hat;
      }
    const double diag_scale = H.diagonal().maxCoeff() + 1e-300;

    bool moved = false;
    for (int attempt = 0; attempt < 10 && !moved; ++attempt) {
      Eigen::MatrixXd damped = H;
      damped.diagonal().array() += tau * diag_scale;
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);
      if (ldlt.info() == Eigen::Success) {
        const Eigen::VectorXd direction = ldlt.solve(grad);
        if (direction.allFinite()) {
          double t = 1.0;
          for (int bt = 0; bt < 30 && !moved; ++bt) {
            const Eigen::VectorXd f_try = s.f + t * direction.head(n);
            const Eigen::VectorXd g_try = s.g + t * direction.tail(m);
            const double dual_try = dual_of(f_try, g_try);
            if (dual_try > dual) {
              s.f = f_try;
              s.g = g_try;
              dual = dual_try;
              moved = true;
            }
            t *= 0.5;
          }
        }
      }
      if (!moved) tau = (tau == 0.0) ? 1e-14 : tau * 1e3;
    }
    ++s.iterations;
    if (!moved) return;  // stationary at FP resolution
    tau *= 0.1;
  }
}

// Damped symmetric (Jacobi) updates with 1/2 averaging:
//   f <- (f + lambda * softmin_j(C - g; b)) / 2,  lambda = rho^2/(rho^2+eps^2),
// run through a geometric eps^2 ladder when annealing is on. Symmetric
// updates make swapping the inputs an exact transposition of the iterates,
// so divergences agree between orders to the certificate level.
//
// Convergence is declared when the sup-norm potential change falls below
// tol * eps^2, or when the primal-dual gap certifies the value to tol
// relative. If the damped phase stalls short of both (its slow mass-
// equilibration modes decay like eps^2/rho^2 per sweep), a Newton polish on
// the dual finishes the job.
DualSolve solve_duals(const Eigen::MatrixXd& cost, const Eigen::VectorXd& a,
                      const Eigen::VectorXd& b, const Eigen::VectorXd& log_a,
                      const Eigen::VectorXd& log_b, double eps_hat, double rho_hat,
                      const SinkhornConfig& cfg) {
  const Eigen::Index n = cost.rows();
  const Eigen::Index m = cost.cols();
  DualSolve s;
  s.f.setZero(n);
  s.g.setZero(m);
  Eigen::VectorXd ft(n), gt(m);

  std::vector<double> ladder;
  if (cfg.anneal) {
    const double cmax = cost.maxCoeff();
    for (double e = pow2_at_least(cmax); e > eps_hat; e *= 0.25) ladder.push_back(e);
  }
  ladder.push_back(eps_hat);

  const double final_thresh = cfg.tol * eps_hat;
  constexpr int kStageIterCap = 12;  // the Newton polish finishes the job
  constexpr int kGapCheckPeriod = 8;
  constexpr int kStallWindow = 64;
  Eigen::VectorXd zf(m), zg(n);

  for (std::size_t stage = 0; stage < ladder.size(); ++stage) {
    const bool final_stage = (stage + 1 == ladder.size());
    const double e = ladder[stage];
    const double lambda = rho_hat / (rho_hat + e);
    const double thresh = final_stage ? final_thresh : 0.02 * e;
    int stage_iters = 0;
    double stall_reference = std::numeric_limits<double>::infinity();
    while (s.iterations < cfg.max_iter) {
      softmin_rows(cost, log_b, s.g, e, ft, zf);
      softmin_cols(cost, log_a, s.f, e, gt, zg);
      double delta = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double fn = 0.5 * (s.f[i] + lambda * ft[i]);
        delta = std::max(delta, std::abs(fn - s.f[i]));
        s.f[i] = fn;
      }
      for (Eigen::Index j = 0; j < m; ++j) {
        const double gn = 0.5 * (s.g[j] + lambda * gt[j]);
        delta = std::max(delta, std::abs(gn - s.g[j]));
        s.g[j] = gn;
      }
      ++s.iterations;
      ++stage_iters;
      if (delta <= thresh) {
        if (final_stage) s.converged = true;
        break;
      }
      if (final_stage) {
        if (stage_iters % kGapCheckPeriod == 0 &&
            gap_within(primal_dual_bracket(cost, a, b, log_a, log_b, s.f, s.g, eps_hat,
                                           rho_hat),
                       cfg.tol)) {
          s.converged = true;
          break;
        }
        if (stage_iters % kStallWindow == 0) {
          if (delta > 0.5 * stall_reference) break;  // hand over to the polish
          stall_reference = delta;
        }
        if (stage_iters >= kStallWindow) break;  // the polish is cheaper
      }
      if (!final_stage && stage_iters >= kStageIterCap) break;
    }
  }

  if (!s.converged && s.iterations < cfg.max_iter)
    newton_polish(cost, a, b, log_a, log_b, eps_hat, rho_hat, cfg, s);
  return s;
}

double generalized_kl(const Eigen::VectorXd& mu, const Eigen::VectorXd& nu) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    if (mu[i] > 0.0) acc += mu[i] * std::log(mu[i] / nu[i]) - mu[i] + nu[i];
    else acc += nu[i];
  }
  return acc;
}

// Objective decomposition on the plan implied by (f, g), streamed row by row
// so the plan itself is never materialized.
TransportSummary evaluate_summary(const Eigen::MatrixXd& cost, const Eigen::VectorXd& a,
                                  const Eigen::VectorXd& b, const Eigen::VectorXd& log_a,
                                  const Eigen::VectorXd& log_b, const DualSolve& s,
                                  double eps_hat, double rho_hat) {
  const Eigen::Index n = cost.rows();
  const Eigen::Index m = cost.cols();
  Eigen::VectorXd row_sum = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd col_sum = Eigen::VectorXd::Zero(m);
  double transport = 0.0;
  double entropic = 0.0;  // sum_ij pi_ij (f_i + g_j - C_ij) = eps^2 sum pi log(pi/ab)
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double expo = (s.f[i] + s.g[j] - cost(i, j)) / eps_hat;
      const double pij = std::exp(log_a[i] + log_b[j] + expo);
      row_sum[i] += pij;
      col_sum[j] += pij;
      transport += pij * cost(i, j);
      entropic += pij * (eps_hat * expo);
    }
  }
  const double mass = row_sum.sum();
  const double ma = a.sum();
  const double mb = b.sum();

  TransportSummary out;
  out.transport_cost = transport;
  out.kl_joint = entropic - eps_hat * mass + eps_hat * ma * mb;
  out.kl_row = rho_hat * generalized_kl(row_sum, a);
  out.kl_col = rho_hat * generalized_kl(col_sum, b);
  out.total = out.transport_cost + out.kl_joint + out.kl_row + out.kl_col;
  out.iterations = s.iterations;
  out.converged = s.converged;
  out.mass_mismatch = std::abs(ma - mb) > 1e-9 * std::max({ma, mb, 1.0});
  return out;
}

}  // namespace

Eigen::MatrixXd cost_matrix(const WeightedPointSet& x, const WeightedPointSet& y, int p) {
  if (x.dim() != y.dim())
    throw_invalid("point dimension mismatch: " + std::to_string(x.dim()) + " vs " +
                  std::to_string(y.dim()));
  if (p != 1 && p != 2) throw_invalid("norm exponent must be 1 or 2");
  const Eigen::Index n = x.size();
  const Eigen::Index m = y.size();
  Eigen::MatrixXd cost(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const Eigen::RowVectorXd diff = x.points.row(i) - y.points.row(j);
      cost(i, j) = (p == 2) ? diff.norm() : diff.cwiseAbs().sum();
    }
  }
  return cost;
}

double cost_diameter(const WeightedPointSet& x, const WeightedPointSet& y, int p) {
  return cost_matrix(x, y, p).maxCoeff();
}

std::pair<TransportSummary, DualPotentials> sinkhorn_unbalanced(const WeightedPointSet& a,
                                                                const WeightedPointSet& b,
                                                                const SinkhornConfig& cfg) {
  if (a.size() == 0 || b.size() == 0) throw_empty("transport inputs must be nonempty");
  validate(a);
  validate(b);
  if ((a.weights.array() <= 0.0).any() || (b.weights.array() <= 0.0).any())
    throw_invalid("transport weights must be strictly positive (normalize first)");
  if (!(cfg.epsilon > 0.0) || !(cfg.rho > 0.0)) throw_invalid("epsilon and rho must be > 0");
  if (cfg.max_iter < 1) throw_invalid("max_iter must be >= 1");
  if (!(cfg.tol > 0.0)) throw_invalid("tol must be > 0");

  const Eigen::MatrixXd cost = cost_matrix(a, b, cfg.p_exponent);
  const double eps_hat = cfg.epsilon * cfg.epsilon;
  const double rho_hat = cfg.rho * cfg.rho;
  const Eigen::VectorXd log_a = a.weights.array().log();
  const Eigen::VectorXd log_b = b.weights.array().log();

  const DualSolve s =
      solve_duals(cost, a.weights, b.weights, log_a, log_b, eps_hat, rho_hat, cfg);
  TransportSummary summary =
      evaluate_summary(cost, a.weights, b.weights, log_a, log_b, s, eps_hat, rho_hat);
  return {summary, DualPotentials{s.f, s.g}};
}

double debiased_divergence(const WeightedPointSet& a, const WeightedPointSet& b,
                           const SinkhornConfig& cfg) {
  return debiased_divergence_detail(a, b, cfg).value;
}

DebiasedDetail debiased_divergence_detail(const WeightedPointSet& a, const WeightedPointSet& b,
                                          const SinkhornConfig& cfg) {
  DebiasedDetail d;
  auto [cross, pot_cross] = sinkhorn_unbalanced(a, b, cfg);
  auto [self_a, pot_a] = sinkhorn_unbalanced(a, a, cfg);
  auto [self_b, pot_b] = sinkhorn_unbalanced(b, b, cfg);
  d.cross = cross;
  d.self_a = self_a;
  d.self_b = self_b;
  d.pot_cross = std::move(pot_cross);
  d.pot_self_a = std::move(pot_a);
  d.pot_self_b = std::move(pot_b);
  d.value = cross.total - 0.5 * self_a.total - 0.5 * self_b.total;
  return d;
}

Eigen::MatrixXd transport_plan(const WeightedPointSet& a, const WeightedPointSet& b,
                               const DualPotentials& potentials, const SinkhornConfig& cfg) {
  if (potentials.f.size() != a.size() || potentials.g.size() != b.size())
    throw_invalid("potential sizes do not match the inputs");
  const Eigen::MatrixXd cost = cost_matrix(a, b, cfg.p_exponent);
  const double eps_hat = cfg.epsilon * cfg.epsilon;
  Eigen::MatrixXd plan(a.size(), b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i)
    for (Eigen::Index j = 0; j < b.size(); ++j)
      plan(i, j) = a.weights[i] * b.weights[j] *
                   std::exp((potentials.f[i] + potentials.g[j] - cost(i, j)) / eps_hat);
  return plan;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> plan_marginals(const Eigen::MatrixXd& plan) {
  return {plan.rowwise().sum(), plan.colwise().sum().transpose()};
}

const LossPreset& preset(std::string_view name) {
  auto make_cfg = [](double eps, double rho) {
    SinkhornConfig c;
    c.epsilon = eps;
    c.rho = rho;
    c.p_exponent = 2;
    c.debiased = true;
    c.anneal = true;
    c.max_iter = 5000;
    return c;
  };
  static const LossPreset presets[] = {
      {"linemod-kp", make_cfg(1e-3, 0.5), 5.0, 0},
      {"occ-kp", make_cfg(1e-3, 0.5), 0.1, 0},
      {"zebrapose", make_cfg(1e-4, 0.1), 100.0, 8},
  };
  for (const auto& p : presets)
    if (name == p.name) return p;
  throw_invalid("unknown preset '" + std::string(name) +
                "' (expected linemod-kp, occ-kp or zebrapose)");
}

}  // namespace otkd
