#pragma once

// Projected-gradient-descent maximizers over the l-inf ball intersected with
// the [0,1] box: the training-time attack step, the prediction attack, and
// the top-k feature-importance attack (IFIA) used for evaluation. Iterates
// move by sign-gradient steps; the ball projection runs before the box
// projection; per-sample best iterates are tracked so the result is never
// worse than the clean point.

#include <cstdint>
#include <vector>

#include "robattr/metrics.hpp"
#include "robattr/objectives.hpp"
#include "robattr/rng.hpp"

namespace robattr {

struct PgdConfig {
  int steps = 10;
  double step_size = 0.01;
  bool random_start = true;
  int m_attack = 8;
  double epsilon = 0.3;

  void validate() const {
    ROBATTR_REQUIRE(steps >= 1, "pgd: steps must be >= 1");
    ROBATTR_REQUIRE(step_size > 0.0, "pgd: step_size must be > 0");
    ROBATTR_REQUIRE(m_attack >= 1, "pgd: m_attack must be >= 1");
    ROBATTR_REQUIRE(epsilon >= 0.0, "pgd: epsilon must be >= 0");
  }
};

namespace detail {

inline void project_ball_box(Tensor& cur, const Tensor& center, double eps,
                             const Neighborhood& nbhd) {
  double* p = cur.data();
  const double* c = center.data();
  for (int64_t i = 0; i < cur.numel(); ++i) {
    double v = p[i];
    const double lo = c[i] - eps, hi = c[i] + eps;
    v = v < lo ? lo : (v > hi ? hi : v);
    if (nbhd.box) v = v < nbhd.box_lo ? nbhd.box_lo : (v > nbhd.box_hi ? nbhd.box_hi : v);
    p[i] = v;
  }
}

inline Tensor random_start_point(const Tensor& x, double eps,
                                 const Neighborhood& nbhd, Rng& rng) {
  Tensor out = x;
  double* p = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) p[i] += rng.uniform(-eps, eps);
  project_ball_box(out, x, eps, nbhd);
  return out;
}

inline void signed_step(Tensor& cur, const Tensor& grad, double step) {
  double* p = cur.data();
  const double* g = grad.data();
  for (int64_t i = 0; i < cur.numel(); ++i) {
    const double s = g[i] > 0 ? 1.0 : (g[i] < 0 ? -1.0 : 0.0);
    p[i] += step * s;
  }
}

}  // namespace detail

struct PgdResult {
  Tensor x_star;                   // {B,d}
  std::vector<double> best_value;  // attack-term value at x_star, per sample
  std::vector<double> clean_value; // attack-term value at x, per sample
};

// Maximizes the objective's inner term over N(x, eps) with signed gradient
// steps. Candidates: the clean point, the (possibly random) start, and every
// iterate; the best per sample is returned.
inline PgdResult pgd_inner_max(const ObjectiveSpec& spec, const Network& net,
                               const Batch& batch, const PgdConfig& cfg,
                               Rng& rng) {
  cfg.validate();
  spec.validate();
  const int64_t bsz = batch.x.extent(0);
  const double eps = cfg.epsilon;

  auto term_values = [&](const Tensor& at) {
    Tape tape;
    Network::Bound bound = net.bind(tape, /*trainable=*/false);
    Node x = tape.constant(batch.x);
    Node xp = tape.constant(at);
    Node term = attack_term(tape, spec, net, bound, x, xp, batch.y, cfg.m_attack);
    std::vector<double> v(static_cast<size_t>(bsz));
    for (int64_t i = 0; i < bsz; ++i) v[static_cast<size_t>(i)] = term.value()[i];
    return v;
  };

  PgdResult res;
  res.x_star = batch.x;
  res.clean_value = term_values(batch.x);
  res.best_value = res.clean_value;

  Tensor cur = cfg.random_start
                   ? detail::random_start_point(batch.x, eps, spec.nbhd, rng)
                   : batch.x;

  auto consider = [&](const Tensor& at, const std::vector<double>& values) {
    const int64_t d = at.extent(1);
    for (int64_t i = 0; i < bsz; ++i) {
      if (values[static_cast<size_t>(i)] > res.best_value[static_cast<size_t>(i)]) {
        res.best_value[static_cast<size_t>(i)] = values[static_cast<size_t>(i)];
        std::copy(at.data() + i * d, at.data() + (i + 1) * d,
                  res.x_star.data() + i * d);
      }
    }
  };

  for (int t = 0; t < cfg.steps; ++t) {
    Tape tape;
    Network::Bound bound = net.bind(tape, /*trainable=*/false);
    Node x = tape.constant(batch.x);
    Node xp = tape.leaf(cur);
    Node term = attack_term(tape, spec, net, bound, x, xp, batch.y, cfg.m_attack);
    std::vector<double> values(static_cast<size_t>(bsz));
    for (int64_t i = 0; i < bsz; ++i) values[static_cast<size_t>(i)] = term.value()[i];
    consider(cur, values);
    Tensor grad = tape.gradient(sum_all(term), {xp})[0].value();
    detail::signed_step(cur, grad, cfg.step_size);
    detail::project_ball_box(cur, batch.x, eps, spec.nbhd);
  }
  consider(cur, term_values(cur));
  return res;
}

struct PredictionAttackResult {
  Tensor x_adv;
  std::vector<int> pred;
  std::vector<uint8_t> success;
};

// PGD on the loss itself (the madry inner term), then a prediction check.
inline PredictionAttackResult pgd_prediction_attack(const Network& net,
                                                    const Batch& batch,
                                                    const PgdConfig& cfg,
                                                    Rng& rng,
                                                    LossKind kind) {
  ObjectiveSpec spec;
  spec.variant = ObjectiveVariant::madry;
  spec.size = SizeFunction::sum();
  spec.lambda = 1.0;
  spec.loss = kind;
  spec.nbhd.epsilon = cfg.epsilon;
  PgdResult inner = pgd_inner_max(spec, net, batch, cfg, rng);

  PredictionAttackResult out;
  out.x_adv = inner.x_star;
  Tape tape;
  Network::Bound bound = net.bind(tape, false);
  Node logits = net.forward(tape, tape.constant(out.x_adv), bound);
  out.pred = predict_classes(logits.value());
  out.success.resize(batch.y.size());
  for (size_t i = 0; i < batch.y.size(); ++i)
    out.success[i] = out.pred[i] != batch.y[i] ? 1 : 0;
  return out;
}

// ---- IFIA: iterative feature-importance attack (top-k variant) ----

struct IfiaConfig {
  int k = 200;          // size of the attacked top-k set
  double epsilon = 0.3;
  double alpha = 0.01;
  int iters = 100;      // P
  int restarts = 3;
  int m_attack = 8;     // IG segments inside the attack
  int m_metrics = 64;   // IG segments for reported metrics
  int metrics_k = 100;  // top-k intersection size for reporting

  void validate(int64_t dim) const {
    ROBATTR_REQUIRE(k >= 1 && k <= dim, "ifia: k must be in [1, ", dim, "]");
    ROBATTR_REQUIRE(metrics_k >= 1 && metrics_k <= dim,
                    "ifia: metrics_k must be in [1, ", dim, "]");
    ROBATTR_REQUIRE(iters >= 1 && restarts >= 1 && alpha > 0.0 &&
                        epsilon >= 0.0 && m_attack >= 1 && m_metrics >= 1,
                    "ifia: invalid config");
  }
};

enum class ImportanceFn { integrated_gradients, simple_gradient };

struct IfiaResult {
  Tensor x_pert;       // {d}
  double kendall;      // at m_metrics
  double topk_inter;   // at m_metrics, metrics_k features
};

namespace detail {

// |importance| per feature for each row of `at`; zero-baseline IG of the
// true-label loss, or the plain loss gradient. Returns a graph node so the
// attack can differentiate through it.
inline Node importance_rows(Tape& tape, const Network& net,
                            const Network::Bound& bound,
                            const std::vector<int>& y, LossKind kind,
                            ImportanceFn fn, Node at, int m) {
  if (fn == ImportanceFn::simple_gradient) {
    AttributionMap sg = simple_gradient(tape, net, bound, y, kind, at);
    return abs(sg.scores);
  }
  Node zero = tape.constant(Tensor::zeros(at.shape()));
  AttributionMap ig = ig_input_loss(tape, net, bound, y, kind, zero, at,
                                    PathSpec{PathSpec::Kind::straightline, m});
  return abs(ig.scores);
}

}  // namespace detail

// Batched IFIA over independent samples; sample_stream[i] seeds sample i's
// random starts. Samples must be correctly classified at the clean input.
inline std::vector<IfiaResult> ifia_topk_batch(
    const Network& net, const Batch& batch, const IfiaConfig& cfg,
    ImportanceFn fn, LossKind kind, uint64_t seed,
    const std::vector<uint64_t>& sample_stream) {
  const int64_t bsz = batch.x.extent(0);
  const int64_t d = batch.x.extent(1);
  cfg.validate(d);
  ROBATTR_REQUIRE(sample_stream.size() == static_cast<size_t>(bsz),
                  "ifia: stream ids must match batch size");

  // clean maps at attack and metric resolution, plus the clean prediction
  Tensor clean8, clean64;
  {
    Tape tape;
    Network::Bound bound = net.bind(tape, false);
    Node x = tape.constant(batch.x);
    clean8 = detail::importance_rows(tape, net, bound, batch.y, kind, fn, x,
                                     cfg.m_attack).value();
    clean64 = detail::importance_rows(tape, net, bound, batch.y, kind, fn, x,
                                      cfg.m_metrics).value();
    Node logits = net.forward(tape, x, bound);
    std::vector<int> pred = predict_classes(logits.value());
    for (int64_t i = 0; i < bsz; ++i)
      ROBATTR_REQUIRE(pred[static_cast<size_t>(i)] == batch.y[static_cast<size_t>(i)],
                      "ifia: sample ", i, " is misclassified at the clean input");
  }

  // the attacked top-k set per sample, from the attack-resolution clean map
  Tensor mask(Shape{bsz, d});
  for (int64_t i = 0; i < bsz; ++i) {
    auto idx = detail::topk_indices(clean8.data() + i * d, d, cfg.k);
    for (int64_t j : idx) mask[i * d + j] = 1.0;
  }

  // best candidate per sample; the clean point itself is the fallback
  std::vector<double> best_tau(static_cast<size_t>(bsz), 1.0);
  Tensor best_x = batch.x;

  auto consider = [&](const Tensor& at, const Tensor& maps,
                      const std::vector<int>& pred) {
    for (int64_t i = 0; i < bsz; ++i) {
      if (pred[static_cast<size_t>(i)] != batch.y[static_cast<size_t>(i)]) continue;
      RankVector a{std::vector<double>(clean8.data() + i * d,
                                       clean8.data() + (i + 1) * d)};
      RankVector b{std::vector<double>(maps.data() + i * d,
                                       maps.data() + (i + 1) * d)};
      double tau;
      try {
        tau = kendall_tau(a, b);
      } catch (const error&) {
        continue;  // degenerate all-tied map
      }
      if (tau < best_tau[static_cast<size_t>(i)]) {
        best_tau[static_cast<size_t>(i)] = tau;
        std::copy(at.data() + i * d, at.data() + (i + 1) * d,
                  best_x.data() + i * d);
      }
    }
  };

  Neighborhood nbhd;  // [0,1] box
  for (int r = 0; r < cfg.restarts; ++r) {
    Tensor cur = batch.x;
    {
      double* p = cur.data();
      for (int64_t i = 0; i < bsz; ++i) {
        Rng row = Rng(seed).fork(sample_stream[static_cast<size_t>(i)] * 0x10001ull +
                                 static_cast<uint64_t>(r));
        for (int64_t j = 0; j < d; ++j)
          p[i * d + j] += row.uniform(-cfg.epsilon, cfg.epsilon);
      }
      detail::project_ball_box(cur, batch.x, cfg.epsilon, nbhd);
    }
    for (int p = 0; p <= cfg.iters; ++p) {
      Tape tape;
      Network::Bound bound = net.bind(tape, false);
      const bool last = p == cfg.iters;
      Node at = last ? tape.constant(cur) : tape.leaf(cur);
      Node maps = detail::importance_rows(tape, net, bound, batch.y, kind, fn,
                                          at, cfg.m_attack);
      Node logits = net.forward(tape, at, bound);
      consider(cur, maps.value(), predict_classes(logits.value()));
      if (last) break;
      Node obj = sum_all(mul(maps, tape.constant(mask)));
      Tensor grad = tape.gradient(obj, {at})[0].value();
      detail::signed_step(cur, grad, -cfg.alpha);  // descend
      detail::project_ball_box(cur, batch.x, cfg.epsilon, nbhd);
    }
  }

  // reported metrics at the metric resolution
  Tensor pert64;
  {
    Tape tape;
    Network::Bound bound = net.bind(tape, false);
    pert64 = detail::importance_rows(tape, net, bound, batch.y, kind, fn,
                                     tape.constant(best_x), cfg.m_metrics)
                 .value();
  }
  std::vector<IfiaResult> out;
  out.reserve(static_cast<size_t>(bsz));
  for (int64_t i = 0; i < bsz; ++i) {
    RankVector a{std::vector<double>(clean64.data() + i * d,
                                     clean64.data() + (i + 1) * d)};
    RankVector b{std::vector<double>(pert64.data() + i * d,
                                     pert64.data() + (i + 1) * d)};
    IfiaResult r;
    r.x_pert = Tensor(Shape{d}, std::vector<double>(best_x.data() + i * d,
                                                    best_x.data() + (i + 1) * d));
    r.kendall = kendall_tau(a, b);
    r.topk_inter = topk_intersection(a, b, cfg.metrics_k);
    out.push_back(std::move(r));
  }
  return out;
}

inline IfiaResult ifia_topk(const Network& net, const Tensor& x, int y,
                            const IfiaConfig& cfg, ImportanceFn fn,
                            LossKind kind, uint64_t seed,
                            uint64_t sample_stream = 0) {
  Batch b;
  b.x = Tensor(Shape{1, x.numel()},
               std::vector<double>(x.data(), x.data() + x.numel()));
  b.y = {y};
  return ifia_topk_batch(net, b, cfg, fn, kind, seed, {sample_stream})[0];
}

}  // namespace robattr
