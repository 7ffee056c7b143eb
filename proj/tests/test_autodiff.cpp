#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "robattr/autodiff.hpp"
#include "robattr/checks.hpp"

using namespace robattr;

TEST_CASE("elementwise forward values") {
  Tape t;
  Node a = t.constant(Tensor({2}, {1.0, 2.0}));
  Node b = t.constant(Tensor({2}, {3.0, 4.0}));
  Node sum = add(a, b);
  CHECK(sum.value()[0] == 4.0);
  CHECK(sum.value()[1] == 6.0);

  Node sp = softplus(t.scalar(0.0));
  CHECK_THAT(sp.value().value(), Catch::Matchers::WithinAbs(std::log(2.0), 1e-15));

  Node v = t.constant(Tensor({3}, {-1.0, 2.0, -3.0}));
  CHECK(one_norm_all(v).value().value() == 6.0);
}

TEST_CASE("shape errors name the operation and shapes") {
  Tape t;
  Node a = t.constant(Tensor({2, 3}));
  Node b = t.constant(Tensor({4, 5}));
  CHECK_THROWS_WITH(add(a, b), Catch::Matchers::ContainsSubstring("add") &&
                                   Catch::Matchers::ContainsSubstring("[2,3]") &&
                                   Catch::Matchers::ContainsSubstring("[4,5]"));
  CHECK_THROWS_WITH(matmul(a, a), Catch::Matchers::ContainsSubstring("matmul"));
}

TEST_CASE("first and second gradients of monomials") {
  Tape t;
  Node x = t.leaf(Tensor::scalar(3.0));
  Node y = mul(x, x);
  Node g = t.gradient(y, {x})[0];
  CHECK(g.value().value() == 6.0);

  Tape t2;
  Node z = t2.leaf(Tensor::scalar(2.0));
  Node cube = mul(mul(z, z), z);
  Node g1 = t2.gradient(cube, {z})[0];
  Node g2 = t2.gradient(g1, {z})[0];
  CHECK(g2.value().value() == 12.0);
}

TEST_CASE("gradient rejects non-scalar outputs and non-grad wrt") {
  Tape t;
  Node x = t.leaf(Tensor({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(t.gradient(mul(x, x), {x}), error);
  Node c = t.constant(Tensor::scalar(1.0));
  CHECK_THROWS_AS(t.gradient(sum_all(x), {c}), error);
}

TEST_CASE("unreachable wrt yields a zero tensor") {
  Tape t;
  Node x = t.leaf(Tensor::scalar(1.0));
  Node other = t.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
  Node y = mul(x, x);
  Tensor g = t.gradient(y, {other})[0].value();
  CHECK(g.shape() == Shape{2, 2});
  for (int64_t i = 0; i < 4; ++i) CHECK(g[i] == 0.0);
}

TEST_CASE("stop_gradient freezes a factor") {
  Tape t;
  Node x = t.leaf(Tensor::scalar(5.0));
  Node y = mul(stop_gradient(x), x);
  CHECK(t.gradient(y, {x})[0].value().value() == 5.0);

  Tape t2;
  Node z = t2.leaf(Tensor::scalar(3.0));
  Node frozen = stop_gradient(mul(z, z));
  CHECK(t2.gradient(sum_all(frozen), {z})[0].value().value() == 0.0);
}

TEST_CASE("kink conventions: abs and relu at zero, flat second derivative") {
  Tape t;
  Node x = t.leaf(Tensor::scalar(0.0));
  CHECK(t.gradient(sum_all(abs(x)), {x})[0].value().value() == 0.0);
  CHECK(t.gradient(sum_all(relu(x)), {x})[0].value().value() == 0.0);

  Tape t2;
  Node z = t2.leaf(Tensor::scalar(1.3));
  Node g1 = t2.gradient(sum_all(abs(z)), {z})[0];
  CHECK(t2.gradient(g1, {z})[0].value().value() == 0.0);
  Node g1r = t2.gradient(sum_all(relu(z)), {z})[0];
  CHECK(t2.gradient(g1r, {z})[0].value().value() == 0.0);
}

TEST_CASE("gradient is linear") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor xv = oracles::random_tensor(rng, {1, 3}, -1.0, 1.0);
    Tensor cv = oracles::random_tensor(rng, {1, 3}, -1.0, 1.0);
    // powers of two keep every product exact
    const double alpha = 2.0, beta = 0.5;

    // With f linear in x and g = sum(x*x), each route collapses to the same
    // commutative two-term sum, so equality is bitwise under an identical
    // evaluation order.
    {
      Tape t;
      Node x = t.leaf(xv);
      Node f = sum_all(mul(x, t.constant(cv)));
      Node g = sum_all(mul(x, x));
      Node combined = add(mul(f, t.scalar(alpha)), mul(g, t.scalar(beta)));
      Tensor gc = t.gradient(combined, {x})[0].value();
      Tensor gf = t.gradient(f, {x})[0].value();
      Tensor gg = t.gradient(g, {x})[0].value();
      for (int64_t i = 0; i < 3; ++i)
        CHECK(gc[i] == alpha * gf[i] + beta * gg[i]);
    }

    // general case: adjoint accumulation order may differ between routes,
    // so agreement is to rounding noise
    {
      Tape t;
      Node x = t.leaf(xv);
      Node f = sum_all(mul(x, x));
      Node g = sum_all(mul(mul(x, x), x));
      Node combined = add(mul(f, t.scalar(alpha)), mul(g, t.scalar(beta)));
      Tensor gc = t.gradient(combined, {x})[0].value();
      Tensor gf = t.gradient(f, {x})[0].value();
      Tensor gg = t.gradient(g, {x})[0].value();
      for (int64_t i = 0; i < 3; ++i)
        CHECK_THAT(gc[i], Catch::Matchers::WithinULP(alpha * gf[i] + beta * gg[i], 4));
    }
  }
}

TEST_CASE("determinism: identical seeds give bitwise-identical results") {
  auto build = [](uint64_t seed) {
    Rng rng(seed);
    Tensor a = oracles::random_tensor(rng, {4, 4}, -1.0, 1.0);
    Tensor b = oracles::random_tensor(rng, {4, 4}, -1.0, 1.0);
    Tape t;
    Node x = t.leaf(a);
    Node y = t.leaf(b);
    Node out = sum_all(softplus(matmul(x, y)));
    Tensor g = t.gradient(out, {x})[0].value();
    return std::make_pair(out.value().value(), g);
  };
  auto [v1, g1] = build(123);
  auto [v2, g2] = build(123);
  CHECK(v1 == v2);
  for (int64_t i = 0; i < g1.numel(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("mixed second derivative matches finite differences") {
  // d/dx of || d/dw softplus(w.x) ||_1 via nested gradients
  CheckResult r = check_autodiff_second_order(8);
  INFO(r.detail);
  CHECK(r.pass);
}

TEST_CASE("primitive vjps match finite differences") {
  CheckResult r = check_autodiff_primitives(8);
  INFO(r.detail);
  CHECK(r.pass);
}

TEST_CASE("tile and sum_tiles are mutually adjoint") {
  Rng rng(7);
  Tensor a = oracles::random_tensor(rng, {2, 3}, -1.0, 1.0);
  Tape t;
  Node x = t.leaf(a);
  Node tiled = tile_rows(x, 4);
  CHECK(tiled.shape() == Shape{8, 3});
  Node back = sum_tiles(tiled, 4);
  for (int64_t i = 0; i < 6; ++i) CHECK(back.value()[i] == 4.0 * a[i]);
}

TEST_CASE("conv and pooling round out the layer vocabulary") {
  Rng rng(9);
  Tensor x = oracles::random_tensor(rng, {1, 1, 4, 4}, 0.0, 1.0);
  Tensor w(Shape{1, 1, 2, 2}, {1.0, 0.0, 0.0, 0.0});
  Tape t;
  Node xn = t.leaf(x);
  Node y = conv2d(xn, t.constant(w));
  // identity-corner kernel picks the top-left of each window
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.value()[0] == x[0]);
  Node pooled = maxpool2(xn);
  CHECK(pooled.shape() == Shape{1, 1, 2, 2});
  CHECK(pooled.value()[0] ==
        std::max({x[0], x[1], x[4], x[5]}));
}
