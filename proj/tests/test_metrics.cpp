#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "robattr/checks.hpp"
#include "robattr/metrics.hpp"

using namespace robattr;

TEST_CASE("kendall tau endpoints") {
  RankVector up{{1, 2, 3, 4, 5}};
  RankVector dn{{5, 4, 3, 2, 1}};
  CHECK(kendall_tau(up, up) == 1.0);
  CHECK(kendall_tau(up, dn) == -1.0);
}

TEST_CASE("kendall tau error paths") {
  RankVector one{{1.0}};
  CHECK_THROWS_AS(kendall_tau(one, one), error);
  RankVector tied{{2.0, 2.0, 2.0}};
  RankVector ok{{1.0, 2.0, 3.0}};
  CHECK_THROWS_AS(kendall_tau(tied, ok), error);
  CHECK_THROWS_AS(kendall_tau(ok, tied), error);
  RankVector shorter{{1.0, 2.0}};
  CHECK_THROWS_AS(kendall_tau(ok, shorter), error);
}

TEST_CASE("kendall tau equals the pair-count oracle, ties included") {
  CheckResult r = check_metrics(200);
  INFO(r.detail);
  CHECK(r.pass);
}

TEST_CASE("kendall tau symmetry and monotone invariance") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const size_t n = 5 + rng.uniform_int(60);
    RankVector a, b;
    for (size_t i = 0; i < n; ++i) {
      a.values.push_back(trial % 2 ? std::floor(rng.uniform(0, 5)) : rng.uniform());
      b.values.push_back(rng.uniform(-1.0, 1.0));
    }
    bool ok_a = false, ok_b = false;
    for (size_t i = 1; i < n; ++i) {
      ok_a |= a.values[i] != a.values[0];
      ok_b |= b.values[i] != b.values[0];
    }
    if (!ok_a) a.values[0] += 1;
    if (!ok_b) b.values[0] += 1;
    CHECK(kendall_tau(a, b) == kendall_tau(b, a));
    // strictly monotone transform preserves all pair orderings
    RankVector bc = b;
    for (double& v : bc.values) v = v * v * v;
    CHECK_THAT(kendall_tau(a, bc),
               Catch::Matchers::WithinAbs(kendall_tau(a, b), 1e-12));
  }
}

TEST_CASE("top-k intersection basics") {
  RankVector a{{0.9, 0.5, 0.1, 0.7}};
  CHECK(topk_intersection(a, a, 2) == 1.0);
  RankVector left{{1, 2, 0, 0, 0, 0}};
  RankVector right{{0, 0, 0, 0, 2, 1}};
  CHECK(topk_intersection(left, right, 2) == 0.0);
  // common positive rescaling changes nothing
  RankVector scaled{{0.09, 0.05, 0.01, 0.07}};
  CHECK(topk_intersection(a, scaled, 3) == 1.0);
  CHECK_THROWS_AS(topk_intersection(a, a, 0), error);
  CHECK_THROWS_AS(topk_intersection(a, a, 5), error);
}

TEST_CASE("top-k ties break toward the lower feature index") {
  RankVector a{{1.0, 1.0, 1.0, 0.0}};
  RankVector b{{0.0, 1.0, 1.0, 1.0}};
  // top-2 of a = {0,1}, top-2 of b = {1,2}
  CHECK(topk_intersection(a, b, 2) == 0.5);
}
