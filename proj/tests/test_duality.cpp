#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "robattr/checks.hpp"
#include "robattr/duality.hpp"

using namespace robattr;

namespace {

FiniteDistProblem small_problem(double rho) {
  return FiniteDistProblem::make(
      3, {0.2, 0.3, 0.5},
      {0, 1, 2, 1, 0, 1, 2, 1, 0},
      {0, 1, 0.5, 0.3, 0, 0.2, 0.8, 0.1, 0}, rho);
}

}  // namespace

TEST_CASE("zero budget forces the identity coupling") {
  FiniteDistProblem pr = small_problem(0.0);
  LpResult res = constrained_sup(pr);
  CHECK_THAT(res.value, Catch::Matchers::WithinAbs(0.0, 1e-12));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK_THAT(res.plan.mass(i, j),
                 Catch::Matchers::WithinAbs(i == j ? pr.p[static_cast<size_t>(i)] : 0.0, 1e-12));
}

TEST_CASE("unbounded budget reaches the per-row maximum") {
  FiniteDistProblem pr = small_problem(1e9);
  const double want = 0.2 * 1.0 + 0.3 * 0.3 + 0.5 * 0.8;
  CHECK_THAT(constrained_sup(pr).value, Catch::Matchers::WithinAbs(want, 1e-12));
}

TEST_CASE("n=3 instance agrees with the conditional-kernel grid oracle") {
  Rng rng(421);
  for (int trial = 0; trial < 5; ++trial) {
    FiniteDistProblem pr = oracles::random_problem(rng, 3);
    const double lp = constrained_sup(pr).value;
    const double grid = oracles::lp_vertex_oracle(pr, 1e-3);
    CHECK_THAT(lp, Catch::Matchers::WithinAbs(grid, 1e-3));
  }
}

TEST_CASE("lagrangian endpoints") {
  FiniteDistProblem pr = small_problem(0.5);
  const double at_zero = lagrangian_rowmax(pr, 0.0);
  CHECK_THAT(at_zero, Catch::Matchers::WithinAbs(0.2 * 1.0 + 0.3 * 0.3 + 0.5 * 0.8, 1e-12));
  // with positive off-diagonal costs the diagonal wins as gamma grows
  CHECK_THAT(lagrangian_rowmax(pr, 1e6), Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("exchange identity: LP over couplings equals the row maximum") {
  CheckResult r = check_theorem2(40);
  INFO(r.detail);
  CHECK(r.pass);
}

TEST_CASE("degenerate payoffs dualize to zero") {
  FiniteDistProblem pr = FiniteDistProblem::make(
      2, {0.4, 0.6}, {0, 1, 1, 0}, {0, 0, 0, 0}, 0.3);
  DualResult res = dual_correspondence(pr, 0.3);
  CHECK(res.gamma_star == 0.0);
  CHECK_THAT(res.primal, Catch::Matchers::WithinAbs(0.0, 1e-12));
  CHECK_THAT(res.dual, Catch::Matchers::WithinAbs(0.0, 1e-12));
}

TEST_CASE("slack budget puts the multiplier at zero") {
  FiniteDistProblem pr = small_problem(100.0);
  DualResult res = dual_correspondence(pr, 100.0);
  CHECK(res.gamma_star == 0.0);
  CHECK_THAT(res.primal,
             Catch::Matchers::WithinAbs(lagrangian_rowmax(pr, 0.0), 1e-9));
}

TEST_CASE("strong duality holds on random instances") {
  CheckResult r = check_duality_strong(60);
  INFO(r.detail);
  CHECK(r.pass);
}

TEST_CASE("dual objective: breakpoint minimum matches a refined grid") {
  Rng rng(99);
  for (int trial = 0; trial < 4; ++trial) {
    FiniteDistProblem pr = oracles::random_problem(rng, 4);
    DualResult res = dual_correspondence(pr, pr.rho);
    auto dual_at = [&](double z) { return lagrangian_rowmax(pr, z) + z * pr.rho; };
    // coarse scan: the breakpoint minimum is never above any grid value, and
    // the grid values are convex in zeta
    double grid_min = std::numeric_limits<double>::infinity();
    double grid_arg = 0.0;
    const double hi = res.gamma_star + 2.0;
    double prev2 = 0.0, prev1 = 0.0;
    int scanned = 0;
    for (double z = 0.0; z <= hi; z += 1e-4) {
      const double v = dual_at(z);
      if (v < grid_min) {
        grid_min = v;
        grid_arg = z;
      }
      if (scanned >= 2) CHECK(prev1 - prev2 <= (v - prev1) + 1e-9);
      prev2 = prev1;
      prev1 = v;
      ++scanned;
    }
    CHECK(res.dual <= grid_min + 1e-12);
    // refine around the best grid point to the stated agreement
    double lo = std::max(0.0, grid_arg - 1e-4), hi2 = grid_arg + 1e-4;
    for (int it = 0; it < 60; ++it) {
      const double m1 = lo + (hi2 - lo) / 3.0, m2 = hi2 - (hi2 - lo) / 3.0;
      if (dual_at(m1) < dual_at(m2)) hi2 = m2; else lo = m1;
    }
    const double refined = dual_at(0.5 * (lo + hi2));
    CHECK_THAT(res.dual, Catch::Matchers::WithinAbs(refined, 1e-6));
  }
}

TEST_CASE("constrained value is monotone in the budget") {
  Rng rng(17);
  FiniteDistProblem pr = oracles::random_problem(rng, 4);
  double prev = -1e300;
  for (double rho : {0.0, 0.1, 0.2, 0.5, 1.0, 2.0}) {
    FiniteDistProblem p2 = pr;
    p2.rho = rho;
    const double v = constrained_sup(p2).value;
    CHECK(v >= prev - 1e-12);
    prev = v;
  }
}

TEST_CASE("wasserstein prediction-robustness reduction") {
  CheckResult r = check_prop4(40);
  INFO(r.detail);
  CHECK(r.pass);

  // rho = 0: both sides are the expected loss
  std::vector<double> losses{0.5, 1.5, 1.0};
  std::vector<double> payoff(9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      payoff[static_cast<size_t>(i) * 3 + j] =
          losses[static_cast<size_t>(j)] - losses[static_cast<size_t>(i)];
  FiniteDistProblem pr = FiniteDistProblem::make(
      3, {0.2, 0.3, 0.5}, {0, 1, 2, 1, 0, 1, 2, 1, 0}, payoff, 0.0);
  CHECK(wasserstein_reduction_check(pr, losses));

  // constant losses: equality at any budget
  std::vector<double> flat{0.7, 0.7, 0.7};
  FiniteDistProblem pr2 = FiniteDistProblem::make(
      3, {0.2, 0.3, 0.5}, {0, 1, 2, 1, 0, 1, 2, 1, 0},
      std::vector<double>(9, 0.0), 0.8);
  CHECK(wasserstein_reduction_check(pr2, flat));
}

TEST_CASE("problem validation") {
  CHECK_THROWS_AS(FiniteDistProblem::make(2, {0.5, 0.6}, {0, 1, 1, 0},
                                          {0, 1, 1, 0}, 0.1),
                  error);  // P does not sum to 1
  CHECK_THROWS_AS(FiniteDistProblem::make(2, {0.5, 0.5}, {0.1, 1, 1, 0},
                                          {0, 1, 1, 0}, 0.1),
                  error);  // nonzero cost diagonal
  CHECK_THROWS_AS(FiniteDistProblem::make(2, {0.5, 0.5}, {0, 1, 1, 0},
                                          {0.2, 1, 1, 0}, 0.1),
                  error);  // nonzero payoff diagonal
  // the relaxed factory admits nonzero payoff diagonals
  FiniteDistProblem ok = FiniteDistProblem::make_general(
      2, {0.5, 0.5}, {0, 1, 1, 0}, {0.2, 1, 1, 0}, 0.1);
  CHECK(ok.d(0, 0) == 0.2);
  FiniteDistProblem pr = small_problem(0.5);
  CHECK_THROWS_AS(dual_correspondence(pr, 0.0), error);
  CHECK_THROWS_AS(dual_correspondence(pr, -1.0), error);
}
