#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "oracles.hpp"
#include "robattr/checkpoint.hpp"
#include "robattr/nn.hpp"
#include "robattr/optim.hpp"

using namespace robattr;

TEST_CASE("identity dense layer passes inputs through") {
  Network net = Network::mlp({2, 2}, Activation::relu, 1);
  net.set_param(0, Tensor({2, 2}, {1, 0, 0, 1}));
  net.set_param(1, Tensor::zeros({2}));
  Tape tape;
  Network::Bound bound = net.bind(tape, false);
  Node logits = net.forward(tape, tape.constant(Tensor({1, 2}, {1.0, 0.0})), bound);
  CHECK(logits.value()[0] == 1.0);
  CHECK(logits.value()[1] == 0.0);
}

TEST_CASE("zero weights give uniform softmax") {
  Network net = Network::mlp({4, 10}, Activation::relu, 1);
  net.set_param(0, Tensor::zeros({4, 10}));
  net.set_param(1, Tensor::zeros({10}));
  Tape tape;
  Network::Bound bound = net.bind(tape, false);
  Node logits = net.forward(tape, tape.constant(Tensor({1, 4}, {.1, .2, .3, .4})), bound);
  for (int64_t k = 0; k < 10; ++k) CHECK(logits.value()[k] == 0.0);
  Node nll = loss_vector(tape, logits, {3}, LossKind::cross_entropy_nll);
  CHECK_THAT(nll.value()[0], Catch::Matchers::WithinAbs(std::log(10.0), 1e-12));
}

TEST_CASE("two-layer logits equal hand-rolled matrix arithmetic") {
  Rng rng(77);
  Network net = Network::mlp({3, 5, 2}, Activation::relu, 42);
  Tensor x = oracles::random_tensor(rng, {2, 3}, -1.0, 1.0);
  Tape tape;
  Network::Bound bound = net.bind(tape, false);
  Node logits = net.forward(tape, tape.constant(x), bound);

  const Tensor& w1 = net.param(0);
  const Tensor& b1 = net.param(1);
  const Tensor& w2 = net.param(2);
  const Tensor& b2 = net.param(3);
  for (int64_t r = 0; r < 2; ++r) {
    double hidden[5];
    for (int64_t j = 0; j < 5; ++j) {
      double s = b1[j];
      for (int64_t i = 0; i < 3; ++i) s += x[r * 3 + i] * w1[i * 5 + j];
      hidden[j] = s > 0 ? s : 0.0;
    }
    for (int64_t k = 0; k < 2; ++k) {
      double s = b2[k];
      for (int64_t j = 0; j < 5; ++j) s += hidden[j] * w2[j * 2 + k];
      CHECK_THAT(logits.value()[r * 2 + k], Catch::Matchers::WithinAbs(s, 1e-12));
    }
  }
}

TEST_CASE("cross entropy equals brute-force log-sum-exp") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor z = oracles::random_tensor(rng, {1, 7}, -30.0, 30.0);
    const int y = static_cast<int>(rng.uniform_int(7));
    Tape tape;
    Node nll = loss_vector(tape, tape.constant(z), {y},
                           LossKind::cross_entropy_nll);
    double lse = 0.0;
    for (int64_t k = 0; k < 7; ++k) lse += std::exp(z[k]);
    const double want = std::log(lse) - z[y];
    CHECK_THAT(nll.value()[0], Catch::Matchers::WithinAbs(want, 1e-12));
  }
}

TEST_CASE("softplus hinge analytic point") {
  Tape tape;
  // y = +1, z = 1 -> ln(1 + exp(0)) = ln 2
  Node z = tape.constant(Tensor({1, 1}, {1.0}));
  Node loss = loss_vector(tape, z, {1}, LossKind::softplus_hinge);
  CHECK_THAT(loss.value()[0], Catch::Matchers::WithinAbs(std::log(2.0), 1e-15));
  CHECK(loss.value()[0] >= 0.0);
}

TEST_CASE("labels out of range are rejected") {
  Tape tape;
  Node z = tape.constant(Tensor({1, 3}));
  CHECK_THROWS_AS(loss_vector(tape, z, {3}, LossKind::cross_entropy_nll), error);
  CHECK_THROWS_AS(loss_vector(tape, z, {-1}, LossKind::cross_entropy_nll), error);
  Node z1 = tape.constant(Tensor({1, 1}));
  CHECK_THROWS_AS(loss_vector(tape, z1, {2}, LossKind::softplus_hinge), error);
}

TEST_CASE("saturated true-class margin drives the loss to zero") {
  Tape tape;
  Tensor z(Shape{1, 3});
  z[1] = 20.0;  // margin 20 over the other logits
  Node nll = loss_vector(tape, tape.constant(z), {1},
                         LossKind::cross_entropy_nll);
  CHECK(nll.value()[0] < 1e-8);
  CHECK(nll.value()[0] >= 0.0);
  // and it keeps shrinking as the margin grows
  Tensor z2(Shape{1, 3});
  z2[1] = 40.0;
  Node nll2 = loss_vector(tape, tape.constant(z2), {1},
                          LossKind::cross_entropy_nll);
  CHECK(nll2.value()[0] <= nll.value()[0]);
}

TEST_CASE("parameter gradients match finite differences on smooth nets") {
  Rng rng(3);
  Network net = Network::mlp({3, 6, 3}, Activation::softplus, 11);
  Tensor x = oracles::random_tensor(rng, {2, 3}, 0.0, 1.0);
  std::vector<int> y{1, 2};
  double worst = 0.0;
  for (size_t pi = 0; pi < net.param_count(); ++pi) {
    Tape tape;
    Network::Bound bound = net.bind(tape, true);
    Node loss = loss_mean(tape, net.forward(tape, tape.constant(x), bound),
                          y, LossKind::cross_entropy_nll);
    Tensor got = tape.gradient(loss, {bound.params[pi]})[0].value();
    auto phi = [&](const Tensor& pv) {
      Network tweaked = net;
      tweaked.set_param(pi, pv);
      Tape t;
      Network::Bound b = tweaked.bind(t, false);
      return loss_mean(t, tweaked.forward(t, t.constant(x), b), y,
                       LossKind::cross_entropy_nll).value().value();
    };
    worst = std::max(worst, oracles::max_rel_err(
                                got, oracles::fd_gradient(phi, net.param(pi))));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("forward is pure") {
  Network net = Network::mlp({4, 6, 3}, Activation::relu, 19);
  Rng rng(1);
  Tensor x = oracles::random_tensor(rng, {3, 4}, 0.0, 1.0);
  Tensor first, second;
  {
    Tape tape;
    Network::Bound bound = net.bind(tape, false);
    first = net.forward(tape, tape.constant(x), bound).value();
  }
  {
    Tape tape;
    Network::Bound bound = net.bind(tape, false);
    second = net.forward(tape, tape.constant(x), bound).value();
  }
  for (int64_t i = 0; i < first.numel(); ++i) CHECK(first[i] == second[i]);
}

TEST_CASE("forward rejects mismatched input shapes") {
  Network net = Network::mlp({4, 2}, Activation::relu, 1);
  Tape tape;
  Network::Bound bound = net.bind(tape, false);
  CHECK_THROWS_WITH(net.forward(tape, tape.constant(Tensor({1, 3})), bound),
                    Catch::Matchers::ContainsSubstring("expected {B,4}"));
}

TEST_CASE("sgd analytic step") {
  // f(t) = t^2, t0 = 1, lr = 0.1: t1 = 1 - 0.1*2 = 0.8
  std::vector<Tensor> params{Tensor::scalar(1.0)};
  std::vector<Tensor> grads{Tensor::scalar(2.0)};
  SgdState state;
  sgd_step(params, grads, state, SgdConfig{0.1, 0.0});
  CHECK(params[0].value() == 0.8);
}

TEST_CASE("adam first step is a signed unit step scaled by lr") {
  std::vector<Tensor> params{Tensor({2}, {1.0, -2.0})};
  std::vector<Tensor> grads{Tensor({2}, {0.3, -0.7})};
  AdamState state;
  const AdamConfig cfg{0.01, 0.9, 0.999, 1e-8};
  adam_step(params, grads, state, cfg);
  // theta1 = theta0 - lr g/(|g| + eps)
  CHECK_THAT(params[0][0],
             Catch::Matchers::WithinAbs(1.0 - 0.01 * 0.3 / (0.3 + 1e-8), 1e-15));
  CHECK_THAT(params[0][1],
             Catch::Matchers::WithinAbs(-2.0 + 0.01 * 0.7 / (0.7 + 1e-8), 1e-15));
}

TEST_CASE("adam minimizes a convex quadratic") {
  // f(t) = 0.5 <t - c, t - c>: monotone descent after warmup until the loss
  // first drops below 1e-3, and it stays below from then on
  Tensor c({3}, {0.3, -0.6, 1.2});
  std::vector<Tensor> params{Tensor({3}, {2.0, 2.0, -2.0})};
  AdamState state;
  const AdamConfig cfg{0.05, 0.9, 0.999, 1e-8};
  double prev = 1e300;
  int converged_at = -1;
  int nonmonotone = 0, resurfaced = 0;
  double final_loss = 0.0;
  for (int step = 0; step < 200; ++step) {
    std::vector<Tensor> grads{Tensor({3})};
    double loss = 0.0;
    for (int64_t i = 0; i < 3; ++i) {
      grads[0][i] = params[0][i] - c[i];
      loss += 0.5 * grads[0][i] * grads[0][i];
    }
    if (converged_at < 0 && loss < 1e-3) converged_at = step;
    if (converged_at < 0 && step >= 20 && loss > prev) ++nonmonotone;
    if (converged_at >= 0 && loss >= 1e-3) ++resurfaced;
    prev = loss;
    final_loss = loss;
    adam_step(params, grads, state, cfg);
  }
  CHECK(final_loss < 1e-3);
  CHECK(converged_at > 0);
  CHECK(nonmonotone == 0);
  CHECK(resurfaced == 0);
}

TEST_CASE("checkpoint round-trip is bitwise") {
  Network net = Network::mlp({5, 7, 3}, Activation::relu, 23);
  const std::string path =
      (std::filesystem::temp_directory_path() / "robattr_ckpt_test.atrg").string();
  save_checkpoint(net, path);
  Network other = Network::mlp({5, 7, 3}, Activation::relu, 99);
  load_checkpoint(other, path);
  for (size_t i = 0; i < net.param_count(); ++i)
    for (int64_t k = 0; k < net.param(i).numel(); ++k)
      CHECK(other.param(i)[k] == net.param(i)[k]);
  // mismatched topology is rejected
  Network wrong = Network::mlp({5, 8, 3}, Activation::relu, 1);
  CHECK_THROWS_AS(load_checkpoint(wrong, path), error);
  std::remove(path.c_str());
  CHECK_THROWS_AS(read_checkpoint(path), io_error);
}

TEST_CASE("smooth variant swaps relu for softplus") {
  Network net = Network::mlp({3, 4, 2}, Activation::relu, 2);
  Network smooth = net.smooth_variant();
  bool has_softplus = false;
  for (const Layer& l : smooth.layers()) {
    CHECK(l.kind != Layer::Kind::relu);
    has_softplus |= l.kind == Layer::Kind::softplus;
  }
  CHECK(has_softplus);
  // shared parameter values
  for (size_t i = 0; i < net.param_count(); ++i)
    CHECK(smooth.param(i)[0] == net.param(i)[0]);
}

TEST_CASE("conv network forward shape and gradient check") {
  Network net = Network::convnet({1, 6, 6}, {{2, 3}}, 3, Activation::softplus, 31);
  Rng rng(8);
  Tensor x = oracles::random_tensor(rng, {2, 1, 6, 6}, 0.0, 1.0);
  std::vector<int> y{0, 2};
  Tape tape;
  Network::Bound bound = net.bind(tape, true);
  Node logits = net.forward(tape, tape.constant(x), bound);
  CHECK(logits.shape() == Shape{2, 3});
  Node loss = loss_mean(tape, logits, y, LossKind::cross_entropy_nll);
  Tensor got = tape.gradient(loss, {bound.params[0]})[0].value();
  auto phi = [&](const Tensor& pv) {
    Network tweaked = net;
    tweaked.set_param(0, pv);
    Tape t;
    Network::Bound b = tweaked.bind(t, false);
    return loss_mean(t, tweaked.forward(t, t.constant(x), b), y,
                     LossKind::cross_entropy_nll).value().value();
  };
  CHECK(oracles::max_rel_err(got, oracles::fd_gradient(phi, net.param(0))) < 1e-4);
}
