#include "otkd/exact.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <string>
#include <vector>

#include "otkd/error.hpp"

namespace otkd {

namespace {

constexpr int kBalancedCap = 32;
constexpr int kPrimalCap = 6;

// Spanning-tree basis for the transportation simplex. Nodes 0..n-1 are rows,
// nodes n..n+m-1 are columns; basic cells are the tree edges.
struct Basis {
  struct Arc {
    int i, j;
    double flow;
  };
  std::vector<Arc> arcs;

  std::vector<std::vector<int>> adjacency(int n, int m) const {
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(n + m));
    for (int e = 0; e < static_cast<int>(arcs.size()); ++e) {
      adj[static_cast<std::size_t>(arcs[static_cast<std::size_t>(e)].i)].push_back(e);
      adj[static_cast<std::size_t>(n + arcs[static_cast<std::size_t>(e)].j)].push_back(e);
    }
    return adj;
  }
};

// North-west-corner start: greedy fill advancing one index per step, which
// yields exactly n + m - 1 basic cells (zero flows allowed).
Basis northwest_corner(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());
  Basis basis;
  int i = 0, j = 0;
  double ar = a[0], bc = b[0];
  while (true) {
    const double flow = std::min(ar, bc);
    basis.arcs.push_back({i, j, flow});
    if (i == n - 1 && j == m - 1) break;
    if (ar <= bc && i < n - 1) {
      bc -= ar;
      ++i;
      ar = a[i];
    } else if (j < m - 1) {
      ar -= bc;
      ++j;
      bc = b[j];
    } else {
      bc -= ar;
      ++i;
      ar = a[i];
    }
  }
  return basis;
}

// Duals from the basis tree: u_i + v_j = C_ij on basic cells, u_0 = 0.
void compute_duals(const Basis& basis, const Eigen::MatrixXd& cost, std::vector<double>& u,
                   std::vector<double>& v) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  u.assign(static_cast<std::size_t>(n), 0.0);
  v.assign(static_cast<std::size_t>(m), 0.0);
  std::vector<char> seen(static_cast<std::size_t>(n + m), 0);
  const auto adj = basis.adjacency(n, m);
  std::deque<int> queue{0};
  seen[0] = 1;
  while (!queue.empty()) {
    const int node = queue.front();
    queue.pop_front();
    for (int e : adj[static_cast<std::size_t>(node)]) {
      const auto& arc = basis.arcs[static_cast<std::size_t>(e)];
      const int other = (node == arc.i) ? n + arc.j : arc.i;
      if (seen[static_cast<std::size_t>(other)]) continue;
      seen[static_cast<std::size_t>(other)] = 1;
      if (other >= n)
        v[static_cast<std::size_t>(other - n)] = cost(arc.i, arc.j) - u[static_cast<std::size_t>(arc.i)];
      else
        u[static_cast<std::size_t>(other)] = cost(arc.i, arc.j) - v[static_cast<std::size_t>(arc.j)];
      queue.push_back(other);
    }
  }
}

// Unique tree path from row node i to column node n + j, as arc indices.
std::vector<int> tree_path(const Basis& basis, int n, int m, int from_row, int to_col) {
  const auto adj = basis.adjacency(n, m);
  std::vector<int> parent_arc(static_cast<std::size_t>(n + m), -1);
  std::vector<int> parent_node(static_cast<std::size_t>(n + m), -1);
  std::vector<char> seen(static_cast<std::size_t>(n + m), 0);
  std::deque<int> queue{from_row};
  seen[static_cast<std::size_t>(from_row)] = 1;
  const int target = n + to_col;
  while (!queue.empty()) {
    const int node = queue.front();
    queue.pop_front();
    if (node == target) break;
    for (int e : adj[static_cast<std::size_t>(node)]) {
      const auto& arc = basis.arcs[static_cast<std::size_t>(e)];
      const int other = (node == arc.i) ? n + arc.j : arc.i;
      if (seen[static_cast<std::size_t>(other)]) continue;
      seen[static_cast<std::size_t>(other)] = 1;
      parent_arc[static_cast<std::size_t>(other)] = e;
      parent_node[static_cast<std::size_t>(other)] = node;
      queue.push_back(other);
    }
  }
  std::vector<int> path;
  for (int node = target; node != from_row; node = parent_node[static_cast<std::size_t>(node)])
    path.push_back(parent_arc[static_cast<std::size_t>(node)]);
  std::reverse(path.begin(), path.end());
  return path;
}

}  // namespace

ExactPlanResult exact_balanced_ot(const WeightedPointSet& a, const WeightedPointSet& b, int p) {
  validate(a);
  validate(b);
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());
  if (n > kBalancedCap || m > kBalancedCap)
    throw Error(ErrorCode::unsupported_size,
                "balanced oracle supports at most " + std::to_string(kBalancedCap) + " points per side");
  const double mass_a = a.weights.sum();
  const double mass_b = b.weights.sum();
  if (std::abs(mass_a - mass_b) > 1e-9 * std::max({mass_a, mass_b, 1.0}))
    throw_invalid("balanced transport requires equal total masses");

  const Eigen::MatrixXd cost = cost_matrix(a, b, p);
  const double cost_scale = std::max(cost.maxCoeff(), 1e-300);

  // Tiny distinct supply perturbations remove degenerate ties, so pivots
  // cannot cycle. They only steer the pivoting; the final flows are re-solved
  // on the original weights below.
  const double mass = std::max(mass_a, 1e-300);
  const double delta = 1e-13 * mass / (0.5 * n * (n + 1));
  Eigen::VectorXd ap = a.weights;
  Eigen::VectorXd bp = b.weights;
  for (int i = 0; i < n; ++i) ap[i] += delta * (i + 1);
  bp[m - 1] += delta * (0.5 * n * (n + 1));

  Basis basis = northwest_corner(ap, bp);
  std::vector<double> u, v;

  ExactPlanResult result;
  const int max_pivots = 200 * n * m + 200;
  int pivot = 0;
  for (; pivot < max_pivots; ++pivot) {
    compute_duals(basis, cost, u, v);

    std::vector<char> is_basic(static_cast<std::size_t>(n) * static_cast<std::size_t>(m), 0);
    for (const auto& arc : basis.arcs)
      is_basic[static_cast<std::size_t>(arc.i) * static_cast<std::size_t>(m) +
               static_cast<std::size_t>(arc.j)] = 1;

    double best_rc = -1e-11 * cost_scale;  // optimal once nothing beats FP noise
    int best_i = -1, best_j = -1;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) {
        if (is_basic[static_cast<std::size_t>(i) * static_cast<std::size_t>(m) +
                     static_cast<std::size_t>(j)])
          continue;
        const double rc = cost(i, j) - u[static_cast<std::size_t>(i)] - v[static_cast<std::size_t>(j)];
        if (rc < best_rc) {
          best_rc = rc;
          best_i = i;
          best_j = j;
        }
      }
    }
    if (best_i < 0) break;  // all reduced costs nonnegative: optimal

    // Close the cycle: alternate -,+ along the tree path from best_i to
    // best_j, step by the smallest flow on a minus arc.
    const std::vector<int> path = tree_path(basis, n, m, best_i, best_j);
    double theta = std::numeric_limits<double>::infinity();
    int leaving = -1;
    for (std::size_t k = 0; k < path.size(); k += 2) {
      const double flow = basis.arcs[static_cast<std::size_t>(path[k])].flow;
      if (flow < theta) {
        theta = flow;
        leaving = path[k];
      }
    }
    for (std::size_t k = 0; k < path.size(); ++k) {
      auto& arc = basis.arcs[static_cast<std::size_t>(path[k])];
      arc.flow += (k % 2 == 0) ? -theta : theta;
    }
    basis.arcs[static_cast<std::size_t>(leaving)] = {best_i, best_j, theta};
  }

  result.iterations = pivot;

  // Re-solve the flows on the optimal basis tree for the unperturbed
  // weights, peeling leaves: each leaf's single arc carries exactly its
  // remaining supply or demand.
  {
    std::vector<double> remaining(static_cast<std::size_t>(n + m));
    for (int i = 0; i < n; ++i) remaining[static_cast<std::size_t>(i)] = a.weights[i];
    for (int j = 0; j < m; ++j) remaining[static_cast<std::size_t>(n + j)] = b.weights[j];
    std::vector<int> degree(static_cast<std::size_t>(n + m), 0);
    std::vector<char> arc_done(basis.arcs.size(), 0);
    const auto adj = basis.adjacency(n, m);
    for (int node = 0; node < n + m; ++node)
      degree[static_cast<std::size_t>(node)] = static_cast<int>(adj[static_cast<std::size_t>(node)].size());
    std::deque<int> leaves;
    for (int node = 0; node < n + m; ++node)
      if (degree[static_cast<std::size_t>(node)] == 1) leaves.push_back(node);
    while (!leaves.empty()) {
      const int node = leaves.front();
      leaves.pop_front();
      int pending = -1;
      for (int e : adj[static_cast<std::size_t>(node)])
        if (!arc_done[static_cast<std::size_t>(e)]) pending = e;
      if (pending < 0) continue;  // last node of the tree
      auto& arc = basis.arcs[static_cast<std::size_t>(pending)];
      arc.flow = std::max(remaining[static_cast<std::size_t>(node)], 0.0);
      arc_done[static_cast<std::size_t>(pending)] = 1;
      const int other = (node == arc.i) ? n + arc.j : arc.i;
      remaining[static_cast<std::size_t>(other)] -= remaining[static_cast<std::size_t>(node)];
      remaining[static_cast<std::size_t>(node)] = 0.0;
      if (--degree[static_cast<std::size_t>(other)] == 1) leaves.push_back(other);
      degree[static_cast<std::size_t>(node)] = 0;
    }
  }

  result.plan = Eigen::MatrixXd::Zero(n, m);
  for (const auto& arc : basis.arcs) result.plan(arc.i, arc.j) += std::max(arc.flow, 0.0);
  result.value = 0.0;
  for (const auto& arc : basis.arcs)
    if (arc.flow > 0.0) result.value += arc.flow * cost(arc.i, arc.j);
  return result;
}

double uot_objective(const Eigen::MatrixXd& plan, const Eigen::MatrixXd& cost,
                     const Eigen::VectorXd& a_weights, const Eigen::VectorXd& b_weights,
                     double epsilon, double rho) {
  const double eps_hat = epsilon * epsilon;
  const double rho_hat = rho * rho;
  const Eigen::Index n = plan.rows();
  const Eigen::Index m = plan.cols();
  double transport = 0.0, joint = 0.0, mass = 0.0;
  Eigen::VectorXd r = Eigen::VectorXd::Zero(n), c = Eigen::VectorXd::Zero(m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double pij = plan(i, j);
      if (pij > 0.0) {
        transport += pij * cost(i, j);
        joint += pij * std::log(pij / (a_weights[i] * b_weights[j]));
        mass += pij;
        r[i] += pij;
        c[j] += pij;
      }
    }
  }
  joint = eps_hat * (joint - mass + a_weights.sum() * b_weights.sum());
  auto gkl = [](const Eigen::VectorXd& mu, const Eigen::VectorXd& nu) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < mu.size(); ++i)
      acc += (mu[i] > 0.0) ? mu[i] * std::log(mu[i] / nu[i]) - mu[i] + nu[i] : nu[i];
    return acc;
  };
  return transport + joint + rho_hat * gkl(r, a_weights) + rho_hat * gkl(c, b_weights);
}

ExactPlanResult primal_uot_oracle(const WeightedPointSet& a, const WeightedPointSet& b,
                                  const SinkhornConfig& cfg, double precision,
                                  std::vector<double>* objective_trace) {
  validate(a);
  validate(b);
  const Eigen::Index n = a.size();
  const Eigen::Index m = b.size();
  if (n > kPrimalCap || m > kPrimalCap)
    throw Error(ErrorCode::unsupported_size,
                "primal oracle supports at most " + std::to_string(kPrimalCap) + " points per side");
  if ((a.weights.array() <= 0.0).any() || (b.weights.array() <= 0.0).any())
    throw_invalid("oracle weights must be strictly positive");

  const Eigen::MatrixXd cost = cost_matrix(a, b, cfg.p_exponent);
  const double eps_hat = cfg.epsilon * cfg.epsilon;
  const double rho_hat = cfg.rho * cfg.rho;
  const Eigen::Index nm = n * m;

  auto objective = [&](const Eigen::MatrixXd& pi) {
    return uot_objective(pi, cost, a.weights, b.weights, cfg.epsilon, cfg.rho);
  };

  // pi = a (x) b makes every KL term start at zero.
  Eigen::MatrixXd pi = a.weights * b.weights.transpose();
  double obj = objective(pi);
  if (objective_trace) objective_trace->push_back(obj);

  // Interior Newton on the primal: the objective is strictly convex in pi
  // with an explicit Hessian, so the damped step handles the rho^2/eps^2
  // ill-conditioning that defeats plain multiplicative updates. A halved
  // multiplicative step is the fallback when the linear solve misbehaves;
  // every accepted step decreases the objective.
  //
  // Entries heading to zero would throttle the fraction-to-boundary rule
  // forever (the 1/pi curvature caps the step at ~eps^2/|grad| once they are
  // small), so entries below the freeze threshold leave the live set; a
  // negative gradient lets a frozen entry rejoin it.
  const double freeze =
      1e-30 * a.weights.sum() * b.weights.sum() / static_cast<double>(nm);
  Eigen::MatrixXd grad(n, m);
  ExactPlanResult result;
  const int max_iter = 4000;
  int stall = 0;
  for (result.iterations = 0; result.iterations < max_iter; ++result.iterations) {
    const Eigen::VectorXd r = pi.rowwise().sum().cwiseMax(1e-300);
    const Eigen::VectorXd c = pi.colwise().sum().transpose().cwiseMax(1e-300);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m; ++j)
        grad(i, j) = cost(i, j) + eps_hat * std::log(pi(i, j) / (a.weights[i] * b.weights[j])) +
                     rho_hat * std::log(r[i] / a.weights[i]) +
                     rho_hat * std::log(c[j] / b.weights[j]);

    // Newton system on the live entries
    std::vector<Eigen::Index> live;
    for (Eigen::Index k = 0; k < nm; ++k)
      if (pi(k / m, k % m) > freeze || grad(k / m, k % m) < 0.0) live.push_back(k);
    Eigen::MatrixXd direction = Eigen::MatrixXd::Zero(n, m);
    bool have_newton = false;
    if (!live.empty()) {
      const Eigen::Index L = static_cast<Eigen::Index>(live.size());
      Eigen::MatrixXd H = Eigen::MatrixXd::Zero(L, L);
      Eigen::VectorXd g(L);
      for (Eigen::Index p = 0; p < L; ++p) {
        const Eigen::Index ip = live[static_cast<std::size_t>(p)] / m;
        const Eigen::Index jp = live[static_cast<std::size_t>(p)] % m;
        g[p] = grad(ip, jp);
        H(p, p) += eps_hat / pi(ip, jp);
        for (Eigen::Index q = 0; q < L; ++q) {
          const Eigen::Index iq = live[static_cast<std::size_t>(q)] / m;
          const Eigen::Index jq = live[static_cast<std::size_t>(q)] % m;
          if (ip == iq) H(p, q) += rho_hat / r[ip];
          if (jp == jq) H(p, q) += rho_hat / c[jp];
        }
      }
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
      if (ldlt.info() == Eigen::Success) {
        const Eigen::VectorXd d = ldlt.solve(-g);
        if (d.allFinite()) {
          for (Eigen::Index p = 0; p < L; ++p)
            direction(live[static_cast<std::size_t>(p)] / m,
                      live[static_cast<std::size_t>(p)] % m) = d[p];
          have_newton = true;
        }
      }
    }

    double trial_obj = 0.0;
    bool accepted = false;
    bool boundary_capped = false;
    Eigen::MatrixXd candidate;
    if (have_newton) {
      // fraction-to-boundary keeps pi positive, backtracking keeps descent
      double step = 1.0;
      for (Eigen::Index k = 0; k < nm; ++k) {
        const double d = direction(k / m, k % m);
        if (d < 0.0) step = std::min(step, -0.995 * pi(k / m, k % m) / d);
      }
      boundary_capped = step < 1.0;
      for (int bt = 0; bt < 60 && !accepted; ++bt) {
        candidate = pi + step * direction;
        trial_obj = objective(candidate);
        if (trial_obj <= obj) accepted = true;
        else step *= 0.5;
      }
    }
    if (!accepted) {
      // multiplicative fallback: pi * exp(-eta grad)
      double eta = 1.0 / (eps_hat + 2.0 * rho_hat);
      boundary_capped = false;
      for (int bt = 0; bt < 60 && !accepted; ++bt) {
        candidate = (pi.array() * (-eta * grad).array().exp()).matrix();
        trial_obj = objective(candidate);
        if (trial_obj <= obj) accepted = true;
        else eta *= 0.5;
      }
    }
    if (!accepted) break;  // stationary at FP resolution

    const double decrease = obj - trial_obj;
    pi.swap(candidate);
    pi = pi.cwiseMax(1e-300);  // keep logs finite for dead entries
    obj = trial_obj;
    if (objective_trace) objective_trace->push_back(obj);
    if (decrease < precision * std::max(std::abs(obj), 1e-300)) {
      // a boundary-capped step only starves the others while an entry dies
      // off; it says nothing about being at the optimum
      if (!boundary_capped && ++stall >= 3) break;
    } else {
      stall = 0;
    }
  }

  result.value = obj;
  result.plan = pi;
  return result;
}

}  // namespace otkd
