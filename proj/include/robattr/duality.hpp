#pragma once

// Finite-sample-space verification of the distributional-robustness results:
// the constrained coupling supremum (a transportation LP with one knapsack
// row), the Lagrangian exchange identity (LP value == per-row maximization),
// strong duality via exact breakpoint enumeration of the piecewise-linear
// dual, and the reduction to Wasserstein prediction robustness.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "robattr/error.hpp"

namespace robattr {

struct Coupling {
  int n = 0;
  std::vector<double> m;  // n*n row-major; row sums are P, columns define Q

  double mass(int i, int j) const { return m[static_cast<size_t>(i) * n + j]; }
};

struct FiniteDistProblem {
  int n = 0;
  std::vector<double> p;       // base distribution, sums to 1
  std::vector<double> cost;    // c >= 0, zero diagonal
  std::vector<double> payoff;  // d, zero diagonal unless relaxed
  double rho = 0.0;
  double gamma = 0.0;

  double c(int i, int j) const { return cost[static_cast<size_t>(i) * n + j]; }
  double d(int i, int j) const { return payoff[static_cast<size_t>(i) * n + j]; }

  static FiniteDistProblem make(int n, std::vector<double> p,
                                std::vector<double> cost,
                                std::vector<double> payoff, double rho,
                                double gamma = 0.0) {
    FiniteDistProblem pr{n, std::move(p), std::move(cost), std::move(payoff),
                         rho, gamma};
    pr.validate(/*require_zero_diag_payoff=*/true);
    return pr;
  }

  // same checks except the payoff diagonal may be nonzero (used to probe the
  // exchange identity beyond its stated hypothesis)
  static FiniteDistProblem make_general(int n, std::vector<double> p,
                                        std::vector<double> cost,
                                        std::vector<double> payoff, double rho,
                                        double gamma = 0.0) {
    FiniteDistProblem pr{n, std::move(p), std::move(cost), std::move(payoff),
                         rho, gamma};
    pr.validate(/*require_zero_diag_payoff=*/false);
    return pr;
  }

  void validate(bool require_zero_diag_payoff) const {
    ROBATTR_REQUIRE(n >= 1 && n <= 6, "finite problem: n must be in [1,6]");
    ROBATTR_REQUIRE(p.size() == static_cast<size_t>(n) &&
                        cost.size() == static_cast<size_t>(n) * n &&
                        payoff.size() == static_cast<size_t>(n) * n,
                    "finite problem: size mismatch");
    double sum = 0.0;
    for (double v : p) {
      ROBATTR_REQUIRE(v >= 0.0, "finite problem: negative probability");
      sum += v;
    }
    ROBATTR_REQUIRE(std::fabs(sum - 1.0) <= 1e-12,
                    "finite problem: P sums to ", sum, ", not 1");
    ROBATTR_REQUIRE(rho >= 0.0 && gamma >= 0.0,
                    "finite problem: rho and gamma must be >= 0");
    for (int i = 0; i < n; ++i) {
      ROBATTR_REQUIRE(c(i, i) == 0.0, "finite problem: cost diagonal not zero");
      if (require_zero_diag_payoff)
        ROBATTR_REQUIRE(d(i, i) == 0.0,
                        "finite problem: payoff diagonal not zero");
      for (int j = 0; j < n; ++j)
        ROBATTR_REQUIRE(c(i, j) >= 0.0, "finite problem: negative cost");
    }
  }
};

namespace detail {

// Dense tableau simplex (maximization, Bland's rule). Constraints are the n
// row-sum equalities plus, optionally, the cost knapsack row with a slack.
// The starting basis is the identity coupling plus the slack.
struct TransportLp {
  double value = 0.0;
  std::vector<double> plan;  // n*n
};

inline TransportLp solve_transport(const FiniteDistProblem& pr,
                                   const std::vector<double>& objective,
                                   bool with_cost_row) {
  const int n = pr.n;
  const int nm = n * n;
  const int nvars = nm + (with_cost_row ? 1 : 0);
  const int nrows = n + (with_cost_row ? 1 : 0);
  if (with_cost_row) {
    double diag_cost = 0.0;
    for (int i = 0; i < n; ++i) diag_cost += pr.p[static_cast<size_t>(i)] * pr.c(i, i);
    ROBATTR_REQUIRE(diag_cost <= pr.rho + 1e-15,
                    "transport lp: identity coupling infeasible");
  }

  // tableau rows 0..nrows-1: [A | b]; row nrows: z_j - c_j | -z
  std::vector<std::vector<double>> t(
      static_cast<size_t>(nrows) + 1,
      std::vector<double>(static_cast<size_t>(nvars) + 1, 0.0));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) t[i][static_cast<size_t>(i) * n + j] = 1.0;
    t[i][static_cast<size_t>(nvars)] = pr.p[static_cast<size_t>(i)];
  }
  if (with_cost_row) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        t[n][static_cast<size_t>(i) * n + j] = pr.c(i, j);
    t[n][static_cast<size_t>(nm)] = 1.0;  // slack
    t[n][static_cast<size_t>(nvars)] = pr.rho;
  }
  for (int j = 0; j < nm; ++j)
    t[static_cast<size_t>(nrows)][static_cast<size_t>(j)] = -objective[static_cast<size_t>(j)];

  std::vector<int> basis;
  for (int i = 0; i < n; ++i) basis.push_back(i * n + i);
  if (with_cost_row) basis.push_back(nm);

  auto pivot = [&](int prow, int pcol) {
    const double pe = t[static_cast<size_t>(prow)][static_cast<size_t>(pcol)];
    for (double& v : t[static_cast<size_t>(prow)]) v /= pe;
    for (int r = 0; r <= nrows; ++r) {
      if (r == prow) continue;
      const double f = t[static_cast<size_t>(r)][static_cast<size_t>(pcol)];
      if (f == 0.0) continue;
      for (int c = 0; c <= nvars; ++c)
        t[static_cast<size_t>(r)][static_cast<size_t>(c)] -=
            f * t[static_cast<size_t>(prow)][static_cast<size_t>(c)];
    }
    basis[static_cast<size_t>(prow)] = pcol;
  };

  // bring the starting basis to canonical form
  for (int r = 0; r < nrows; ++r) pivot(r, basis[static_cast<size_t>(r)]);

  const double tol = 1e-11;
  for (int iter = 0; iter < 20000; ++iter) {
    int enter = -1;
    for (int j = 0; j < nvars; ++j) {
      if (t[static_cast<size_t>(nrows)][static_cast<size_t>(j)] < -tol) {
        enter = j;
        break;  // Bland: smallest index
      }
    }
    if (enter < 0) break;
    int leave = -1;
    double best = 0.0;
    for (int r = 0; r < nrows; ++r) {
      const double a = t[static_cast<size_t>(r)][static_cast<size_t>(enter)];
      if (a > tol) {
        const double ratio = t[static_cast<size_t>(r)][static_cast<size_t>(nvars)] / a;
        if (leave < 0 || ratio < best - 1e-15 ||
            (std::fabs(ratio - best) <= 1e-15 &&
             basis[static_cast<size_t>(r)] < basis[static_cast<size_t>(leave)])) {
          leave = r;
          best = ratio;
        }
      }
    }
    ROBATTR_REQUIRE(leave >= 0, "transport lp: unbounded");
    pivot(leave, enter);
  }

  TransportLp out;
  out.plan.assign(static_cast<size_t>(nm), 0.0);
  for (int r = 0; r < nrows; ++r) {
    const int v = basis[static_cast<size_t>(r)];
    if (v < nm)
      out.plan[static_cast<size_t>(v)] =
          t[static_cast<size_t>(r)][static_cast<size_t>(nvars)];
  }
  double z = 0.0;
  for (int j = 0; j < nm; ++j)
    z += objective[static_cast<size_t>(j)] * out.plan[static_cast<size_t>(j)];
  out.value = z;
  return out;
}

}  // namespace detail

struct LpResult {
  double value = 0.0;
  Coupling plan;
};

// max_M sum M_ij d_ij  s.t. row sums = P, sum M_ij c_ij <= rho, M >= 0
inline LpResult constrained_sup(const FiniteDistProblem& pr) {
  detail::TransportLp lp = detail::solve_transport(pr, pr.payoff, true);
  return LpResult{lp.value, Coupling{pr.n, std::move(lp.plan)}};
}

// right-hand side of the exchange identity: sum_i P_i max_j (d_ij - g c_ij)
inline double lagrangian_rowmax(const FiniteDistProblem& pr, double gamma) {
  ROBATTR_REQUIRE(gamma >= 0.0, "lagrangian: gamma must be >= 0");
  double total = 0.0;
  for (int i = 0; i < pr.n; ++i) {
    double best = pr.d(i, 0) - gamma * pr.c(i, 0);
    for (int j = 1; j < pr.n; ++j)
      best = std::max(best, pr.d(i, j) - gamma * pr.c(i, j));
    total += pr.p[static_cast<size_t>(i)] * best;
  }
  return total;
}

// left-hand side by LP over couplings (no cost constraint); asserts the
// exchange identity and returns the common value
inline double lagrangian_value(const FiniteDistProblem& pr, double gamma) {
  std::vector<double> obj(static_cast<size_t>(pr.n) * pr.n);
  for (int i = 0; i < pr.n; ++i)
    for (int j = 0; j < pr.n; ++j)
      obj[static_cast<size_t>(i) * pr.n + j] = pr.d(i, j) - gamma * pr.c(i, j);
  detail::TransportLp lp = detail::solve_transport(pr, obj, false);
  const double rhs = lagrangian_rowmax(pr, gamma);
  ROBATTR_REQUIRE(std::fabs(lp.value - rhs) <= 1e-9,
                  "lagrangian: LP value ", lp.value,
                  " differs from row-max value ", rhs);
  return rhs;
}

struct DualResult {
  double gamma_star = 0.0;
  double primal = 0.0;
  double dual = 0.0;
};

// Minimizes D(z) = sum_i P_i max_j (d_ij - z c_ij) + z rho over z >= 0 by
// evaluating every breakpoint (pairwise line crossings), then asserts strong
// duality against the constrained LP.
inline DualResult dual_correspondence(const FiniteDistProblem& pr, double rho) {
  ROBATTR_REQUIRE(rho > 0.0, "dual: rho must be > 0");
  FiniteDistProblem prob = pr;
  prob.rho = rho;

  std::vector<double> candidates{0.0};
  for (int i = 0; i < prob.n; ++i)
    for (int j = 0; j < prob.n; ++j)
      for (int k = j + 1; k < prob.n; ++k) {
        const double dc = prob.c(i, j) - prob.c(i, k);
        if (dc == 0.0) continue;
        const double z = (prob.d(i, j) - prob.d(i, k)) / dc;
        if (z > 0.0 && std::isfinite(z)) candidates.push_back(z);
      }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()),
                   candidates.end());

  DualResult res;
  res.dual = std::numeric_limits<double>::infinity();
  for (double z : candidates) {
    const double value = lagrangian_rowmax(prob, z) + z * rho;
    if (value < res.dual - 0.0) {
      res.dual = value;
      res.gamma_star = z;
    }
  }
  res.primal = constrained_sup(prob).value;
  ROBATTR_REQUIRE(std::fabs(res.primal - res.dual) <= 1e-9,
                  "dual: primal ", res.primal, " vs dual ", res.dual);
  return res;
}

// With payoff d_ij = loss_j - loss_i, checks
//   E_P[loss] + constrained_sup == sup { E_Q[loss] : W_c(P,Q) <= rho }
// where the right side is its own LP over couplings with payoff loss_j.
inline bool wasserstein_reduction_check(const FiniteDistProblem& pr,
                                        const std::vector<double>& losses,
                                        double tol = 1e-9) {
  ROBATTR_REQUIRE(losses.size() == static_cast<size_t>(pr.n),
                  "wasserstein check: loss vector size mismatch");
  for (int i = 0; i < pr.n; ++i)
    for (int j = 0; j < pr.n; ++j)
      ROBATTR_REQUIRE(
          std::fabs(pr.d(i, j) - (losses[static_cast<size_t>(j)] -
                                  losses[static_cast<size_t>(i)])) <= 1e-12,
          "wasserstein check: payoff is not the loss-difference form");
  double expected = 0.0;
  for (int i = 0; i < pr.n; ++i)
    expected += pr.p[static_cast<size_t>(i)] * losses[static_cast<size_t>(i)];
  const double lhs = expected + constrained_sup(pr).value;

  std::vector<double> obj(static_cast<size_t>(pr.n) * pr.n);
  for (int i = 0; i < pr.n; ++i)
    for (int j = 0; j < pr.n; ++j)
      obj[static_cast<size_t>(i) * pr.n + j] = losses[static_cast<size_t>(j)];
  const double rhs = detail::solve_transport(pr, obj, true).value;
  return std::fabs(lhs - rhs) <= tol;
}

}  // namespace robattr
