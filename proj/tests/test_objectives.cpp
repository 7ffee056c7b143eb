#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "robattr/adversary.hpp"
#include "robattr/checks.hpp"
#include "robattr/objectives.hpp"

using namespace robattr;

namespace {

struct Setup {
  Network net;
  Tensor x, xp;
  std::vector<int> y;
};

Setup make_setup(uint64_t seed, Activation act = Activation::softplus) {
  Rng rng(seed);
  Setup s{Network::mlp({4, 7, 3}, act, seed * 3 + 1),
          oracles::random_tensor(rng, {2, 4}, 0.0, 1.0),
          oracles::random_tensor(rng, {2, 4}, 0.0, 1.0),
          {static_cast<int>(rng.uniform_int(3)), static_cast<int>(rng.uniform_int(3))}};
  return s;
}

}  // namespace

TEST_CASE("the regularizer vanishes at the nominal point") {
  Setup s = make_setup(1);
  Tape tape;
  Network::Bound bound = s.net.bind(tape, false);
  ObjectiveSpec spec;
  spec.variant = ObjectiveVariant::ig_norm;
  spec.lambda = 1.0;
  Node same = tape.constant(s.x);
  ObjectiveParts parts =
      inner_value_parts(tape, spec, s.net, bound, same, same, s.y);
  for (int64_t i = 0; i < 2; ++i) {
    CHECK(parts.reg_term.value()[i] == 0.0);
    CHECK(parts.total.value()[i] == parts.loss_term.value()[i]);
  }
}

TEST_CASE("sum instantiation reproduces the adversarial loss") {
  CheckResult r = check_prop1(20);
  INFO(r.detail);
  CHECK(r.pass);

  // value-level identity on one instance
  Setup s = make_setup(2);
  Tape tape;
  Network::Bound bound = s.net.bind(tape, false);
  AttributionMap ig = ig_input_loss(tape, s.net, bound, s.y,
                                    LossKind::cross_entropy_nll,
                                    tape.constant(s.x), tape.constant(s.xp),
                                    PathSpec{PathSpec::Kind::straightline, 1024});
  for (int64_t i = 0; i < 2; ++i) {
    double sum = 0.0;
    for (int64_t j = 0; j < 4; ++j) sum += ig.scores.value()[i * 4 + j];
    const double lhs = ig.baseline_value.value()[i] + sum;
    const double rhs = ig.target_value.value()[i];
    CHECK_THAT(lhs, Catch::Matchers::WithinAbs(rhs, 1e-3));
  }
}

TEST_CASE("loss-output surrogate dominates the madry value") {
  CheckResult r = check_prop3(2000);
  INFO(r.detail);
  CHECK(r.pass);
}

TEST_CASE("with lambda zero the objective gradient is the plain loss gradient") {
  Setup s = make_setup(3, Activation::relu);
  ObjectiveSpec spec;
  spec.variant = ObjectiveVariant::ig_norm;
  spec.lambda = 0.0;
  Batch batch{s.x, s.y};
  ObjectiveGrads og = objective_grad(spec, s.net, batch, s.xp);

  Tape tape;
  Network::Bound bound = s.net.bind(tape, true);
  Node loss = loss_mean(tape, s.net.forward(tape, tape.constant(s.x), bound),
                        s.y, LossKind::cross_entropy_nll);
  std::vector<Node> plain = tape.gradient(loss, bound.params);
  for (size_t p = 0; p < plain.size(); ++p)
    CHECK(oracles::max_abs_err(og.grads[p], plain[p].value()) <= 1e-12);
}

TEST_CASE("objective gradients match finite differences in theta") {
  for (auto variant : {ObjectiveVariant::ig_norm, ObjectiveVariant::ig_sum_norm,
                       ObjectiveVariant::loss_output}) {
    Setup s = make_setup(4);
    ObjectiveSpec spec;
    spec.variant = variant;
    spec.lambda = 0.7;
    spec.beta = 0.4;
    spec.path.m = 4;
    Batch batch{s.x, s.y};
    ObjectiveGrads og = objective_grad(spec, s.net, batch, s.xp);
    double worst = 0.0;
    for (size_t pi = 0; pi < s.net.param_count(); ++pi) {
      auto phi = [&](const Tensor& pv) {
        Network tweaked = s.net;
        tweaked.set_param(pi, pv);
        Tape t;
        Network::Bound b = tweaked.bind(t, true);
        return mul(sum_all(inner_value(t, spec, tweaked, b, t.constant(s.x),
                                       t.constant(s.xp), s.y)),
                   t.scalar(0.5))
            .value()
            .value();
      };
      worst = std::max(worst,
                       oracles::max_rel_err(og.grads[pi],
                                            oracles::fd_gradient(phi, s.net.param(pi))));
    }
    INFO("variant " << variant_name(variant));
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("ig-sum-norm with beta zero degenerates to madry") {
  Setup s = make_setup(5, Activation::relu);
  Batch batch{s.x, s.y};
  ObjectiveSpec sum_norm;
  sum_norm.variant = ObjectiveVariant::ig_sum_norm;
  sum_norm.beta = 0.0;
  ObjectiveSpec madry;
  madry.variant = ObjectiveVariant::madry;
  madry.size = SizeFunction::sum();
  madry.lambda = 1.0;
  ObjectiveGrads a = objective_grad(sum_norm, s.net, batch, s.xp);
  ObjectiveGrads b = objective_grad(madry, s.net, batch, s.xp);
  CHECK(a.total == b.total);
  for (size_t p = 0; p < a.grads.size(); ++p)
    CHECK(oracles::max_abs_err(a.grads[p], b.grads[p]) == 0.0);
}

TEST_CASE("spec validation enforces the named premises") {
  ObjectiveSpec spec;
  spec.variant = ObjectiveVariant::madry;
  spec.size = SizeFunction::one_norm();
  CHECK_THROWS_AS(spec.validate(), error);
  spec.size = SizeFunction::sum();
  spec.lambda = 2.0;
  CHECK_THROWS_AS(spec.validate(), error);
  spec.lambda = 1.0;
  CHECK_NOTHROW(spec.validate());

  ObjectiveSpec igr;
  igr.variant = ObjectiveVariant::input_grad_reg;
  igr.path.m = 4;
  CHECK_THROWS_AS(igr.validate(), error);
  igr.path.m = 1;
  igr.q = 0.5;
  CHECK_THROWS_AS(igr.validate(), error);
  igr.q = 2.0;
  CHECK_NOTHROW(igr.validate());

  ObjectiveSpec neg;
  neg.lambda = -0.1;
  CHECK_THROWS_AS(neg.validate(), error);
}

TEST_CASE("hoelder maximizer recovery") {
  CheckResult r = check_prop2(6, 2000);
  INFO(r.detail);
  CHECK(r.pass);
}

TEST_CASE("one-layer closed forms") {
  Rng rng(16);
  Tensor w = oracles::random_tensor(rng, {3}, -1.0, 1.0);
  Tensor x = oracles::random_tensor(rng, {3}, 0.0, 1.0);
  SECTION("zero budget") {
    OneLayerForms f = one_layer_closed_form(w, x, 1, 0.0, ScalarLoss::logistic);
    double z = 0.0;
    for (int i = 0; i < 3; ++i) z += w[i] * x[i];
    CHECK_THAT(f.robust_loss,
               Catch::Matchers::WithinAbs(scalar_loss(ScalarLoss::logistic, -z), 1e-15));
    CHECK(f.ig_norm_max == 0.0);
  }
  SECTION("corner enumeration agreement for both losses") {
    CheckResult r = check_theorem4(10);
    INFO(r.detail);
    CHECK(r.pass);
  }
  SECTION("input validation") {
    Tensor bad = w;
    bad[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(one_layer_closed_form(bad, x, 1, 0.1, ScalarLoss::logistic),
                    error);
    CHECK_THROWS_AS(one_layer_closed_form(w, x, 2, 0.1, ScalarLoss::logistic),
                    error);
  }
}

TEST_CASE("optimal inner value is monotone in lambda") {
  Setup s = make_setup(6, Activation::relu);
  ObjectiveSpec spec;
  spec.variant = ObjectiveVariant::ig_norm;
  spec.lambda = 1.0;
  spec.nbhd.epsilon = 0.1;
  spec.path.m = 4;
  PgdConfig cfg;
  cfg.steps = 5;
  cfg.m_attack = 4;
  cfg.epsilon = 0.1;
  Rng rng(21);
  Batch batch{s.x, s.y};
  PgdResult attack = pgd_inner_max(spec, s.net, batch, cfg, rng);
  double prev = -1e300;
  for (double lambda : {0.0, 0.25, 0.5, 1.0, 2.0}) {
    ObjectiveSpec at = spec;
    at.lambda = lambda;
    Tape tape;
    Network::Bound bound = s.net.bind(tape, false);
    const double v =
        sum_all(inner_value(tape, at, s.net, bound, tape.constant(s.x),
                            tape.constant(attack.x_star), s.y))
            .value()
            .value();
    CHECK(v >= prev);
    prev = v;
  }
}
