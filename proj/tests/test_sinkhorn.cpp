#include <doctest.h>

#include <cmath>
#include <random>

#include "otkd/error.hpp"
#include "otkd/exact.hpp"
#include "otkd/sinkhorn.hpp"

using namespace otkd;

namespace {

WeightedPointSet cloud(const std::vector<std::vector<double>>& pts,
                       const std::vector<double>& w) {
  WeightedPointSet s;
  s.points.resize(static_cast<Eigen::Index>(pts.size()), static_cast<Eigen::Index>(pts[0].size()));
  s.weights.resize(static_cast<Eigen::Index>(w.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t d = 0; d < pts[i].size(); ++d)
      s.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = pts[i][d];
    s.weights[static_cast<Eigen::Index>(i)] = w[i];
  }
  return s;
}

WeightedPointSet random_cloud(std::mt19937_64& rng, int n, int dim, bool uniform_weights) {
  std::uniform_real_distribution<double> coord(0.0, 1.0);
  std::uniform_real_distribution<double> weight(0.2, 1.0);
  WeightedPointSet s;
  s.points.resize(n, dim);
  s.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < dim; ++d) s.points(i, d) = coord(rng);
    s.weights[i] = uniform_weights ? 1.0 / n : weight(rng);
  }
  if (!uniform_weights) s.weights /= s.weights.sum();
  return s;
}

SinkhornConfig tight_config(double eps, double rho) {
  SinkhornConfig cfg;
  cfg.epsilon = eps;
  cfg.rho = rho;
  cfg.anneal = true;
  cfg.max_iter = 20000;
  return cfg;
}

}  // namespace

TEST_CASE("cost matrix computes lp distances") {
  const auto x = cloud({{0.0, 0.0}}, {1.0});
  const auto y = cloud({{3.0, 4.0}}, {1.0});
  CHECK(cost_matrix(x, y, 2)(0, 0) == doctest::Approx(5.0));
  CHECK(cost_matrix(x, y, 1)(0, 0) == doctest::Approx(7.0));

  const auto z = cloud({{1.0, 2.0}, {3.0, 4.0}}, {0.5, 0.5});
  const Eigen::MatrixXd c = cost_matrix(z, z, 2);
  CHECK(c(0, 0) == 0.0);
  CHECK(c(1, 1) == 0.0);
  CHECK(c(0, 1) == doctest::Approx(std::sqrt(8.0)));

  const auto w3 = cloud({{0.0, 0.0, 0.0}}, {1.0});
  CHECK_THROWS_AS(cost_matrix(x, w3, 2), Error);
  CHECK_THROWS_AS(cost_matrix(x, y, 3), Error);
}

TEST_CASE("forced singleton plan pays the distance in the stiff-marginal limit") {
  const auto a = cloud({{0.0, 0.0}}, {1.0});
  const auto b = cloud({{0.6, 0.8}}, {1.0});
  auto [summary, pot] = sinkhorn_unbalanced(a, b, tight_config(0.01, 1e3));
  CHECK(summary.converged);
  CHECK(summary.total == doctest::Approx(1.0).epsilon(1e-6));
  const Eigen::MatrixXd plan = transport_plan(a, b, pot, tight_config(0.01, 1e3));
  CHECK(plan(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("identical inputs have zero debiased divergence and vanishing transport") {
  std::mt19937_64 rng(31);
  const auto a = random_cloud(rng, 6, 2, false);
  const auto cfg = tight_config(1e-3, 0.5);
  CHECK(std::abs(debiased_divergence(a, a, cfg)) <= 1e-8);
  auto [summary, pot] = sinkhorn_unbalanced(a, a, cfg);
  CHECK(summary.total > 0.0);  // raw entropic value, not debiased
  CHECK(summary.transport_cost <= 1e-4);
}

TEST_CASE("transport cost matches the simplex oracle in the balanced limit") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 9);
    const int m = 2 + static_cast<int>(rng() % 9);
    const auto a = random_cloud(rng, n, 2, true);
    const auto b = random_cloud(rng, m, 2, true);
    const double diam = cost_diameter(a, b);
    const auto exact = exact_balanced_ot(a, b, 2);
    auto [summary, pot] = sinkhorn_unbalanced(a, b, tight_config(1e-4 * diam, 1e3 * diam));
    CHECK(summary.transport_cost ==
          doctest::Approx(exact.value).epsilon(0.01));
  }
}

TEST_CASE("objective matches the primal mirror-descent oracle off balance") {
  std::mt19937_64 rng(123);
  for (double rho_scale : {0.1, 0.5, 10.0}) {
    const auto a = random_cloud(rng, 4, 2, false);
    const auto b = random_cloud(rng, 5, 2, false);
    const double diam = cost_diameter(a, b);
    const SinkhornConfig cfg = tight_config(0.01 * diam, rho_scale * diam);
    const auto oracle = primal_uot_oracle(a, b, cfg);
    auto [summary, pot] = sinkhorn_unbalanced(a, b, cfg);
    CHECK(summary.total == doctest::Approx(oracle.value).epsilon(0.005));
  }
}

TEST_CASE("summary decomposition equals the objective on the materialized plan") {
  std::mt19937_64 rng(7);
  const auto a = random_cloud(rng, 5, 3, false);
  const auto b = random_cloud(rng, 4, 3, false);
  const auto cfg = tight_config(0.05, 0.3);
  auto [summary, pot] = sinkhorn_unbalanced(a, b, cfg);
  CHECK(summary.total == doctest::Approx(summary.transport_cost + summary.kl_joint +
                                         summary.kl_row + summary.kl_col)
                             .epsilon(1e-9));
  const Eigen::MatrixXd plan = transport_plan(a, b, pot, cfg);
  const double direct = uot_objective(plan, cost_matrix(a, b, 2), a.weights, b.weights,
                                      cfg.epsilon, cfg.rho);
  CHECK(summary.total == doctest::Approx(direct).epsilon(1e-9));
  CHECK(summary.kl_row >= 0.0);
  CHECK(summary.kl_col >= 0.0);
}

TEST_CASE("debiased divergence is symmetric") {
  std::mt19937_64 rng(55);
  const auto a = random_cloud(rng, 6, 2, false);
  const auto b = random_cloud(rng, 4, 2, false);
  auto cfg = tight_config(1e-2, 0.5);
  cfg.tol = 1e-11;  // both orders certified within 1e-12 of the optimum
  const double ab = debiased_divergence(a, b, cfg);
  const double ba = debiased_divergence(b, a, cfg);
  CHECK(ab == doctest::Approx(ba).epsilon(1e-11));
}

TEST_CASE("scalar outputs are invariant to point permutations") {
  std::mt19937_64 rng(56);
  const auto a = random_cloud(rng, 5, 2, false);
  const auto b = random_cloud(rng, 6, 2, false);
  const auto cfg = tight_config(1e-2, 0.5);
  const double base = debiased_divergence(a, b, cfg);

  WeightedPointSet shuffled = a;
  shuffled.points.row(0).swap(shuffled.points.row(4));
  std::swap(shuffled.weights[0], shuffled.weights[4]);
  shuffled.points.row(1).swap(shuffled.points.row(2));
  std::swap(shuffled.weights[1], shuffled.weights[2]);
  const double perm = debiased_divergence(shuffled, b, cfg);
  CHECK(perm == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("common translation leaves the loss unchanged") {
  std::mt19937_64 rng(57);
  const auto a = random_cloud(rng, 5, 2, false);
  const auto b = random_cloud(rng, 6, 2, false);
  const auto cfg = tight_config(1e-2, 0.5);
  const double base = debiased_divergence(a, b, cfg);
  WeightedPointSet a2 = a, b2 = b;
  a2.points.col(0).array() += 2.5;
  a2.points.col(1).array() -= 1.25;
  b2.points.col(0).array() += 2.5;
  b2.points.col(1).array() -= 1.25;
  CHECK(debiased_divergence(a2, b2, cfg) == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("plan marginals approach the inputs for stiff rho") {
  std::mt19937_64 rng(58);
  const auto a = random_cloud(rng, 6, 2, false);
  const auto b = random_cloud(rng, 5, 2, false);
  const double diam = cost_diameter(a, b);
  const auto cfg = tight_config(3e-2 * diam, 1e3 * diam);
  auto [summary, pot] = sinkhorn_unbalanced(a, b, cfg);
  const auto plan = transport_plan(a, b, pot, cfg);
  const auto [row, col] = plan_marginals(plan);
  CHECK(0.5 * (row - a.weights).cwiseAbs().sum() <= 1e-3);
  CHECK(0.5 * (col - b.weights).cwiseAbs().sum() <= 1e-3);
}

TEST_CASE("plan mass vanishes as rho goes to zero") {
  std::mt19937_64 rng(59);
  const auto a = random_cloud(rng, 4, 2, true);
  const auto b = random_cloud(rng, 4, 2, true);
  const double diam = cost_diameter(a, b);
  const auto cfg = tight_config(1e-3 * diam, 1e-6 * diam);
  auto [summary, pot] = sinkhorn_unbalanced(a, b, cfg);
  const auto plan = transport_plan(a, b, pot, cfg);
  CHECK(plan.sum() <= 1e-6);
}

TEST_CASE("near-identity plan for identical clouds at small blur") {
  const auto a = cloud({{0.0, 0.0}, {1.0, 0.0}}, {0.5, 0.5});
  const auto cfg = tight_config(1e-3, 1e3);
  auto [summary, pot] = sinkhorn_unbalanced(a, a, cfg);
  const auto plan = transport_plan(a, a, pot, cfg);
  CHECK(plan(0, 0) == doctest::Approx(0.5).epsilon(1e-3));
  CHECK(plan(0, 1) <= 1e-3);
  CHECK(plan(1, 0) <= 1e-3);
}

TEST_CASE("log-domain updates survive costs spanning six orders of magnitude") {
  // pairwise distances from 1e-3 to 1e+3 with epsilon^2 = 1
  const auto a = cloud({{0.0}, {1e-3}, {10.0}, {1000.0}}, {0.25, 0.25, 0.25, 0.25});
  const auto b = cloud({{5e-4}, {2e-3}, {11.0}, {999.0}}, {0.25, 0.25, 0.25, 0.25});
  SinkhornConfig cfg;
  cfg.epsilon = 1.0;
  cfg.rho = 10.0;
  cfg.max_iter = 5000;
  auto [summary, pot] = sinkhorn_unbalanced(a, b, cfg);
  CHECK(std::isfinite(summary.total));
  CHECK(pot.f.allFinite());
  CHECK(pot.g.allFinite());
  const auto plan = transport_plan(a, b, pot, cfg);
  CHECK(plan.allFinite());
}

TEST_CASE("non-convergence is reported, not thrown") {
  std::mt19937_64 rng(60);
  const auto a = random_cloud(rng, 5, 2, false);
  const auto b = random_cloud(rng, 5, 2, false);
  SinkhornConfig cfg;
  cfg.epsilon = 1e-3;
  cfg.rho = 0.5;
  cfg.max_iter = 2;
  auto [summary, pot] = sinkhorn_unbalanced(a, b, cfg);
  CHECK_FALSE(summary.converged);
  CHECK(std::isfinite(summary.total));
}

TEST_CASE("empty and nonpositive inputs are rejected") {
  const auto a = cloud({{0.0, 0.0}}, {1.0});
  WeightedPointSet empty;
  empty.points.resize(0, 2);
  empty.weights.resize(0);
  CHECK_THROWS_AS(sinkhorn_unbalanced(empty, a, SinkhornConfig{}), Error);
  auto zero_weight = cloud({{0.0, 0.0}, {1.0, 1.0}}, {1.0, 0.0});
  CHECK_THROWS_AS(sinkhorn_unbalanced(zero_weight, a, SinkhornConfig{}), Error);
}

TEST_CASE("mass mismatch is flagged in the summary") {
  const auto a = cloud({{0.0, 0.0}}, {1.0});
  const auto b = cloud({{1.0, 0.0}}, {0.5});
  auto [summary, pot] = sinkhorn_unbalanced(a, b, tight_config(0.1, 1.0));
  CHECK(summary.mass_mismatch);
  auto [balanced, pot2] = sinkhorn_unbalanced(a, a, tight_config(0.1, 1.0));
  CHECK_FALSE(balanced.mass_mismatch);
}

TEST_CASE("presets carry the published hyperparameters") {
  CHECK(preset("linemod-kp").cfg.epsilon == 0.001);
  CHECK(preset("linemod-kp").cfg.rho == 0.5);
  CHECK(preset("linemod-kp").weight == 5.0);
  CHECK(preset("occ-kp").weight == 0.1);
  CHECK(preset("zebrapose").cfg.epsilon == 0.0001);
  CHECK(preset("zebrapose").cfg.rho == 0.1);
  CHECK(preset("zebrapose").weight == 100.0);
  CHECK(preset("zebrapose").block == 8);
  CHECK_THROWS_AS(preset("nope"), Error);
}
