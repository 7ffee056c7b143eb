#pragma once

// Verification suites for the propositions and duality theorems, each pairing
// the library's computation with an independent oracle (finite differences,
// corner enumeration, brute-force pair counting, LP vertex enumeration).
// Used by the `check` CLI subcommand and the acceptance suite.

#include <cinttypes>
#include <cstdio>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "robattr/adversary.hpp"
#include "robattr/attribution.hpp"
#include "robattr/duality.hpp"
#include "robattr/metrics.hpp"
#include "robattr/nn.hpp"
#include "robattr/objectives.hpp"
#include "robattr/rng.hpp"

namespace robattr {
namespace oracle {

// central differences of a scalar function of a flat tensor
template <class F>
Tensor fd_gradient(F f, const Tensor& at, double step = 1e-5) {
  Tensor g(at.shape());
  for (int64_t i = 0; i < at.numel(); ++i) {
    Tensor hi = at, lo = at;
    hi[i] += step;
    lo[i] -= step;
    g[i] = (f(hi) - f(lo)) / (2.0 * step);
  }
  return g;
}

inline double max_rel_err(const Tensor& got, const Tensor& want,
                          double denom_floor = 1e-3) {
  double worst = 0.0;
  for (int64_t i = 0; i < got.numel(); ++i) {
    const double denom = std::max(denom_floor, std::fabs(want[i]));
    worst = std::max(worst, std::fabs(got[i] - want[i]) / denom);
  }
  return worst;
}

inline double max_abs_err(const Tensor& got, const Tensor& want) {
  double worst = 0.0;
  for (int64_t i = 0; i < got.numel(); ++i)
    worst = std::max(worst, std::fabs(got[i] - want[i]));
  return worst;
}

inline Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// O(n^2) tie-aware Kendall tau by direct pair classification
inline double kendall_brute(const RankVector& a, const RankVector& b) {
  const size_t n = a.values.size();
  long long concordant = 0, discordant = 0, tie_a_only = 0, tie_b_only = 0;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      const double da = a.values[i] - a.values[j];
      const double db = b.values[i] - b.values[j];
      if (da == 0.0 && db == 0.0) continue;
      if (da == 0.0) { ++tie_a_only; continue; }
      if (db == 0.0) { ++tie_b_only; continue; }
      if (da * db > 0) ++concordant;
      else ++discordant;
    }
  // (C - D) / sqrt((C + D + Ta)(C + D + Tb)), ties in one vector only
  const double cd = static_cast<double>(concordant + discordant);
  const double denom = std::sqrt((cd + static_cast<double>(tie_a_only)) *
                                 (cd + static_cast<double>(tie_b_only)));
  return static_cast<double>(concordant - discordant) / denom;
}

// exact ||IG||_1 for a one-layer loss g(-y<w, x+delta>) along the straight
// path, via the secant-slope closed form
inline double one_layer_ig_norm_exact(const Tensor& w, const Tensor& x, int y,
                                      const std::vector<double>& delta,
                                      ScalarLoss g) {
  double z = 0.0, ddot = 0.0, wd_abs = 0.0;
  for (int64_t i = 0; i < w.numel(); ++i) {
    z += w[i] * x[i];
    ddot += w[i] * delta[static_cast<size_t>(i)];
    wd_abs += std::fabs(w[i] * delta[static_cast<size_t>(i)]);
  }
  z = -static_cast<double>(y) * z;
  const double step = -static_cast<double>(y) * ddot;
  if (std::fabs(step) < 1e-12) return scalar_loss_grad(g, z) * wd_abs;
  return std::fabs(scalar_loss(g, z + step) - scalar_loss(g, z)) /
         std::fabs(step) * wd_abs;
}

template <class F>
double corner_enumerate(int64_t d, double eps, F value_of,
                        std::vector<double>* argmax = nullptr) {
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> delta(static_cast<size_t>(d));
  for (uint64_t msk = 0; msk < (1ull << d); ++msk) {
    for (int64_t i = 0; i < d; ++i)
      delta[static_cast<size_t>(i)] = (msk >> i) & 1 ? eps : -eps;
    const double v = value_of(delta);
    if (v > best) {
      best = v;
      if (argmax) *argmax = delta;
    }
  }
  return best;
}

inline double corner_max_ig_norm(const Tensor& w, const Tensor& x, int y,
                                 double eps, ScalarLoss g) {
  return corner_enumerate(w.numel(), eps, [&](const std::vector<double>& delta) {
    return one_layer_ig_norm_exact(w, x, y, delta, g);
  });
}

inline double corner_max_loss(const Tensor& w, const Tensor& x, int y,
                              double eps, ScalarLoss g) {
  return corner_enumerate(w.numel(), eps, [&](const std::vector<double>& delta) {
    double dot = 0.0;
    for (int64_t i = 0; i < w.numel(); ++i)
      dot += w[i] * (x[i] + delta[static_cast<size_t>(i)]);
    return scalar_loss(g, -static_cast<double>(y) * dot);
  });
}

// Vertex enumeration for max sum(M d) s.t. rows = P, sum(M c) <= rho: every
// vertex is a deterministic map, possibly with one row mixing two targets so
// the cost constraint is tight. mix_grid > 0 scans the mixing weight on a
// grid instead (a conditional-kernel grid search).
inline double lp_vertex_oracle(const FiniteDistProblem& pr,
                               double mix_grid = 0.0) {
  const int n = pr.n;
  double best = -std::numeric_limits<double>::infinity();
  std::vector<int> sigma(static_cast<size_t>(n), 0);
  int64_t total = 1;
  for (int i = 0; i < n; ++i) total *= n;
  for (int64_t code = 0; code < total; ++code) {
    int64_t rem = code;
    for (int i = 0; i < n; ++i) {
      sigma[static_cast<size_t>(i)] = static_cast<int>(rem % n);
      rem /= n;
    }
    double cost = 0.0, value = 0.0;
    for (int i = 0; i < n; ++i) {
      cost += pr.p[static_cast<size_t>(i)] * pr.c(i, sigma[static_cast<size_t>(i)]);
      value += pr.p[static_cast<size_t>(i)] * pr.d(i, sigma[static_cast<size_t>(i)]);
    }
    if (cost <= pr.rho + 1e-12) best = std::max(best, value);
    for (int i = 0; i < n; ++i) {
      const int j1 = sigma[static_cast<size_t>(i)];
      const double pi = pr.p[static_cast<size_t>(i)];
      if (pi == 0.0) continue;
      for (int j2 = 0; j2 < n; ++j2) {
        if (j2 == j1) continue;
        const double dcost = pi * (pr.c(i, j2) - pr.c(i, j1));
        const double dval = pi * (pr.d(i, j2) - pr.d(i, j1));
        if (mix_grid > 0.0) {
          for (double wmix = 0.0; wmix <= 1.0 + 1e-12; wmix += mix_grid)
            if (cost + wmix * dcost <= pr.rho + 1e-12)
              best = std::max(best, value + wmix * dval);
        } else if (dcost != 0.0) {
          const double wmix = (pr.rho - cost) / dcost;
          if (wmix >= 0.0 && wmix <= 1.0)
            best = std::max(best, value + wmix * dval);
        }
      }
    }
  }
  return best;
}

inline FiniteDistProblem random_problem(Rng& rng, int n,
                                        bool zero_diag_payoff = true) {
  std::vector<double> p(static_cast<size_t>(n));
  double sum = 0.0;
  for (double& v : p) {
    v = rng.uniform(0.05, 1.0);
    sum += v;
  }
  double acc = 0.0;
  for (int i = 0; i + 1 < n; ++i) {
    p[static_cast<size_t>(i)] /= sum;
    acc += p[static_cast<size_t>(i)];
  }
  p[static_cast<size_t>(n - 1)] = 1.0 - acc;  // exact unit sum
  std::vector<double> c(static_cast<size_t>(n) * n), d(static_cast<size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      c[static_cast<size_t>(i) * n + j] = i == j ? 0.0 : rng.uniform(0.1, 2.0);
      d[static_cast<size_t>(i) * n + j] =
          (i == j && zero_diag_payoff) ? 0.0 : rng.uniform(-1.0, 1.0);
    }
  const double rho = rng.uniform(0.05, 1.0);
  if (zero_diag_payoff)
    return FiniteDistProblem::make(n, std::move(p), std::move(c), std::move(d), rho);
  return FiniteDistProblem::make_general(n, std::move(p), std::move(c),
                                         std::move(d), rho);
}

}  // namespace oracle

// ---- check suites ----

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace detail {

inline CheckResult make_result(const std::string& name, bool pass,
                               const std::string& fmt_detail) {
  return CheckResult{name, pass, fmt_detail};
}

template <class... Args>
std::string fmt(const char* f, Args... args) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

}  // namespace detail

// Every registered primitive's vjp against central finite differences on
// random inputs kept away from kinks.
inline CheckResult check_autodiff_primitives(int seeds = 50) {
  double worst = 0.0;
  std::string worst_op = "-";
  auto note = [&](const char* op, double err) {
    if (err > worst) {
      worst = err;
      worst_op = op;
    }
  };

  for (int seed = 1; seed <= seeds; ++seed) {
    Rng rng(static_cast<uint64_t>(seed) * 7919u);
    // weights for the scalar projection phi = <r, op(x)>
    auto check_unary = [&](const char* name, auto build, Tensor input) {
      Tensor r = oracle::random_tensor(rng, input.shape(), -1.0, 1.0);
      auto phi = [&](const Tensor& at) {
        Tape t;
        Node x = t.leaf(at);
        Node y = build(x);
        Tensor rr = r;
        if (y.value().shape() != r.shape()) {
          rr = Tensor(y.value().shape());
          for (int64_t i = 0; i < rr.numel(); ++i)
            rr[i] = r[i % r.numel()];
        }
        return sum_all(mul(y, t.constant(rr))).value().value();
      };
      Tape t;
      Node x = t.leaf(input);
      Node y = build(x);
      Tensor rr = r;
      if (y.value().shape() != r.shape()) {
        rr = Tensor(y.value().shape());
        for (int64_t i = 0; i < rr.numel(); ++i) rr[i] = r[i % r.numel()];
      }
      Node phi_node = sum_all(mul(y, t.constant(rr)));
      Tensor got = t.gradient(phi_node, {x})[0].value();
      Tensor want = oracle::fd_gradient(phi, input);
      note(name, oracle::max_rel_err(got, want));
    };

    Tensor x24 = oracle::random_tensor(rng, {2, 4}, -1.0, 1.0);
    check_unary("neg", [](Node x) { return neg(x); }, x24);
    check_unary("exp", [](Node x) { return exp(x); }, x24);
    check_unary("softplus", [](Node x) { return softplus(x); }, x24);
    check_unary("sigmoid", [](Node x) { return sigmoid(x); }, x24);
    check_unary("sum_all", [](Node x) { return sum_all(x); }, x24);
    check_unary("row_sum", [](Node x) { return row_sum(x); }, x24);
    check_unary("col_sum", [](Node x) { return col_sum(x); }, x24);
    check_unary("transpose", [](Node x) { return transpose(x); }, x24);
    check_unary("reshape", [](Node x) { return reshape(x, {4, 2}); }, x24);
    check_unary("tile_rows", [](Node x) { return tile_rows(x, 3); }, x24);
    check_unary("mean_all", [](Node x) { return mean_all(x); }, x24);

    Tensor x64 = oracle::random_tensor(rng, {6, 4}, -1.0, 1.0);
    check_unary("sum_tiles", [](Node x) { return sum_tiles(x, 3); }, x64);

    Tensor pos = oracle::random_tensor(rng, {2, 4}, 0.4, 2.0);
    check_unary("log", [](Node x) { return log(x); }, pos);
    check_unary("pow2.5", [](Node x) { return pow_const(x, 2.5); }, pos);
    check_unary("pow1", [](Node x) { return pow_const(x, 1.0); }, pos);

    // kink-avoiding inputs: |x| >= 0.05
    Tensor away(Shape{2, 4});
    for (int64_t i = 0; i < away.numel(); ++i) {
      const double mag = rng.uniform(0.05, 1.0);
      away[i] = rng.uniform() < 0.5 ? -mag : mag;
    }
    check_unary("abs", [](Node x) { return abs(x); }, away);
    check_unary("relu", [](Node x) { return relu(x); }, away);

    // clamp: keep entries >= 0.05 away from the bounds
    Tensor cl(Shape{2, 4});
    for (int64_t i = 0; i < cl.numel(); ++i)
      cl[i] = rng.uniform() < 0.5 ? rng.uniform(-0.4, 0.4)
                                  : rng.uniform(0.6, 1.2);
    check_unary("clamp", [](Node x) { return clamp(x, -0.5, 0.5); }, cl);

    // reductions with well separated entries
    Tensor sep(Shape{2, 4});
    for (int64_t i = 0; i < sep.numel(); ++i)
      sep[i] = rng.uniform(-1.0, 1.0) + 0.11 * static_cast<double>(i);
    check_unary("row_max", [](Node x) { return row_max(x); }, sep);
    check_unary("max_all", [](Node x) { return max_all(x); }, sep);

    // binary ops
    auto check_binary = [&](const char* name, auto build, Tensor in_a, Tensor in_b) {
      Tape t;
      Node a = t.leaf(in_a);
      Node b = t.leaf(in_b);
      Node y = build(a, b);
      Tensor r = oracle::random_tensor(rng, y.value().shape(), -1.0, 1.0);
      Node phi_node = sum_all(mul(y, t.constant(r)));
      auto grads = t.gradient(phi_node, {a, b});
      auto phi_a = [&](const Tensor& at) {
        Tape tt;
        Node aa = tt.leaf(at);
        Node bb = tt.constant(in_b);
        return sum_all(mul(build(aa, bb), tt.constant(r))).value().value();
      };
      auto phi_b = [&](const Tensor& at) {
        Tape tt;
        Node aa = tt.constant(in_a);
        Node bb = tt.leaf(at);
        return sum_all(mul(build(aa, bb), tt.constant(r))).value().value();
      };
      note(name, oracle::max_rel_err(grads[0].value(),
                                     oracle::fd_gradient(phi_a, in_a)));
      note(name, oracle::max_rel_err(grads[1].value(),
                                     oracle::fd_gradient(phi_b, in_b)));
    };

    Tensor a24 = oracle::random_tensor(rng, {2, 4}, -1.0, 1.0);
    Tensor b24 = oracle::random_tensor(rng, {2, 4}, -1.0, 1.0);
    Tensor b21 = oracle::random_tensor(rng, {2, 1}, 0.5, 1.5);
    Tensor b4 = oracle::random_tensor(rng, {4}, -1.0, 1.0);
    check_binary("add", [](Node a, Node b) { return add(a, b); }, a24, b24);
    check_binary("sub", [](Node a, Node b) { return sub(a, b); }, a24, b24);
    check_binary("mul", [](Node a, Node b) { return mul(a, b); }, a24, b24);
    check_binary("div", [](Node a, Node b) { return divide(a, b); }, a24, b21);
    check_binary("add_row", [](Node a, Node b) { return add(a, b); }, a24, b4);
    check_binary("mul_col", [](Node a, Node b) { return mul(a, b); }, a24, b21);
    // separated operands for the subgradient mask
    Tensor msep = b24;
    for (int64_t i = 0; i < msep.numel(); ++i)
      if (std::fabs(msep[i] - a24[i]) < 0.05) msep[i] += 0.11;
    check_binary("maximum", [](Node a, Node b) { return maximum(a, b); }, a24, msep);
    check_binary("matmul", [](Node a, Node b) { return matmul(a, b); },
                 oracle::random_tensor(rng, {3, 4}, -1.0, 1.0),
                 oracle::random_tensor(rng, {4, 2}, -1.0, 1.0));

    // conv stack
    check_binary("conv2d", [](Node a, Node b) { return conv2d(a, b); },
                 oracle::random_tensor(rng, {2, 2, 5, 5}, -1.0, 1.0),
                 oracle::random_tensor(rng, {3, 2, 2, 2}, -1.0, 1.0));
    Tensor pool_in = oracle::random_tensor(rng, {1, 2, 4, 4}, -1.0, 1.0);
    for (int64_t i = 0; i < pool_in.numel(); ++i)
      pool_in[i] += 0.07 * static_cast<double>(i % 16);
    check_unary("maxpool2", [](Node x) { return maxpool2(x); }, pool_in);
  }
  return detail::make_result(
      "autodiff primitive vjps vs finite differences",
      worst <= 1e-4,
      detail::fmt("worst rel err %.3g (%s), tolerance 1e-4", worst,
                  worst_op.c_str()));
}

// Nested differentiation: d/dx of ||d/dw softplus(w.x)||_1 against finite
// differences, and the analytic second derivative of
// f(x) = softplus(a x) softplus(b x).
inline CheckResult check_autodiff_second_order(int seeds = 50) {
  double worst_fd = 0.0, worst_analytic = 0.0;
  for (int seed = 1; seed <= seeds; ++seed) {
    Rng rng(static_cast<uint64_t>(seed) * 104729u);
    const int64_t d = 4;
    Tensor w0 = oracle::random_tensor(rng, {1, d}, -1.0, 1.0);
    Tensor x0 = oracle::random_tensor(rng, {1, d}, -1.0, 1.0);

    {
      Tape t;
      Node w = t.leaf(w0);
      Node x = t.leaf(x0);
      Node y = softplus(row_sum(mul(w, x)));
      Node gw = t.gradient(sum_all(y), {w})[0];
      Node nrm = one_norm_all(gw);
      Tensor got = t.gradient(nrm, {x})[0].value();
      auto phi = [&](const Tensor& xv) {
        Tape tt;
        Node ww = tt.leaf(w0);
        Node xx = tt.leaf(xv);
        Node yy = softplus(row_sum(mul(ww, xx)));
        Node gg = tt.gradient(sum_all(yy), {ww})[0];
        return one_norm_all(gg).value().value();
      };
      worst_fd = std::max(worst_fd,
                          oracle::max_rel_err(got, oracle::fd_gradient(phi, x0)));
    }
    {
      const double a = rng.uniform(-1.0, 1.0);
      const double b = rng.uniform(-1.0, 1.0);
      const double xv = rng.uniform(-1.0, 1.0);
      Tape t;
      Node x = t.leaf(Tensor::scalar(xv));
      Node f = mul(softplus(x * a), softplus(x * b));
      Node g1 = t.gradient(f, {x})[0];
      Node g2 = t.gradient(g1, {x})[0];
      auto sp = [](double z) { return detail::softplus_scalar(z); };
      auto sg = [](double z) { return detail::sigmoid_scalar(z); };
      const double analytic =
          a * a * sg(a * xv) * (1 - sg(a * xv)) * sp(b * xv) +
          2 * a * b * sg(a * xv) * sg(b * xv) +
          b * b * sp(a * xv) * sg(b * xv) * (1 - sg(b * xv));
      worst_analytic =
          std::max(worst_analytic, std::fabs(g2.value().value() - analytic));
    }
  }
  const bool pass = worst_fd <= 1e-4 && worst_analytic <= 1e-6;
  return detail::make_result(
      "autodiff nested second-order checks", pass,
      detail::fmt("fd rel err %.3g (tol 1e-4), analytic abs err %.3g (tol 1e-6)",
                  worst_fd, worst_analytic));
}

namespace detail {

inline Network random_smooth_net(Rng& rng, const std::vector<int64_t>& dims) {
  return Network::mlp(dims, Activation::softplus, rng.next_u64());
}

struct IgProbe {
  double residual = 0.0;
  double delta_f = 0.0;
};

inline IgProbe ig_residual_at(const Network& net, const Tensor& x,
                              const Tensor& xp, const std::vector<int>& y,
                              int m) {
  Tape tape;
  Network::Bound bound = net.bind(tape, false);
  AttributionMap map =
      ig_input_loss(tape, net, bound, y, LossKind::cross_entropy_nll,
                    tape.constant(x), tape.constant(xp),
                    PathSpec{PathSpec::Kind::straightline, m});
  IgProbe probe;
  probe.residual = completeness_residuals(map)[0];
  probe.delta_f =
      map.target_value.value()[0] - map.baseline_value.value()[0];
  return probe;
}

}  // namespace detail

// Completeness: residual at m=1024 below 1e-3 relative to |f(x')-f(x)| and
// smaller than the residual at m=64 on nearly every net.
inline CheckResult check_completeness(int nets = 20) {
  int improved = 0;
  double worst_rel = 0.0;
  for (int seed = 1; seed <= nets; ++seed) {
    Rng rng(static_cast<uint64_t>(seed) * 15485863u);
    Network net = detail::random_smooth_net(rng, {6, 12, 8, 3});
    Tensor x, xp;
    std::vector<int> y{0};
    double delta = 0.0;
    do {
      x = oracle::random_tensor(rng, {1, 6}, 0.0, 1.0);
      xp = oracle::random_tensor(rng, {1, 6}, 0.0, 1.0);
      y[0] = static_cast<int>(rng.uniform_int(3));
      delta = detail::ig_residual_at(net, x, xp, y, 4).delta_f;
    } while (std::fabs(delta) < 5e-2);
    const auto probe64 = detail::ig_residual_at(net, x, xp, y, 64);
    const auto probe1024 = detail::ig_residual_at(net, x, xp, y, 1024);
    worst_rel = std::max(worst_rel,
                         probe1024.residual / std::fabs(probe1024.delta_f));
    if (probe1024.residual < probe64.residual) ++improved;
  }
  const bool pass = worst_rel < 1e-3 && improved >= (nets * 18) / 20;
  return detail::make_result(
      "completeness residual shrinks with m", pass,
      detail::fmt("worst rel residual at m=1024: %.3g (tol 1e-3); improved vs "
                  "m=64 on %d/%d nets (need %d)",
                  worst_rel, improved, nets, (nets * 18) / 20));
}

// l(x) + sum(IG(x,x')) == l(x') up to the measured Riemann tolerance.
inline CheckResult check_prop1(int triples = 100) {
  double worst_ratio = 0.0;  // residual relative to the fitted C/m bound
  double worst_rel = 0.0;
  for (int seed = 1; seed <= triples; ++seed) {
    Rng rng(static_cast<uint64_t>(seed) * 32452843u);
    Network net = detail::random_smooth_net(rng, {5, 10, 6, 3});
    Tensor x = oracle::random_tensor(rng, {1, 5}, 0.0, 1.0);
    Tensor xp = oracle::random_tensor(rng, {1, 5}, 0.0, 1.0);
    std::vector<int> y{static_cast<int>(rng.uniform_int(3))};
    const auto p64 = detail::ig_residual_at(net, x, xp, y, 64);
    const auto p128 = detail::ig_residual_at(net, x, xp, y, 128);
    const auto p1024 = detail::ig_residual_at(net, x, xp, y, 1024);
    const double c_fit = std::max(64.0 * p64.residual, 128.0 * p128.residual);
    const double bound = std::max(1.5 * c_fit / 1024.0, 1e-9);
    worst_ratio = std::max(worst_ratio, p1024.residual / bound);
    worst_rel = std::max(worst_rel, p1024.residual /
                                        std::max(1e-3, std::fabs(p1024.delta_f)));
  }
  const bool pass = worst_ratio <= 1.0 && worst_rel <= 1e-2;
  return detail::make_result(
      "madry recovery: loss + sum(IG) == loss at x'", pass,
      detail::fmt("worst residual / measured tolerance %.3g (need <= 1); worst "
                  "relative gap %.3g",
                  worst_ratio, worst_rel));
}

// With m=1 the regularizer's exact maximizer over the conjugate-norm ball is
// the Hoelder point, reaching eps^q ||grad l||_q^q; random search never beats it.
inline CheckResult check_prop2(int seeds = 20, int random_trials = 10000) {
  double worst_gap = 0.0;
  int exceed = 0;
  for (int seed = 1; seed <= seeds; ++seed) {
    Rng rng(static_cast<uint64_t>(seed) * 49979687u);
    Network net = detail::random_smooth_net(rng, {4, 8, 3});
    Tensor x = oracle::random_tensor(rng, {1, 4}, 0.0, 1.0);
    std::vector<int> y{static_cast<int>(rng.uniform_int(3))};
    const double eps = rng.uniform(0.05, 0.3);
    for (double q : {1.0, 2.0}) {
      Tape tape;
      Network::Bound bound = net.bind(tape, false);
      AttributionMap sg = simple_gradient(tape, net, bound, y,
                                          LossKind::cross_entropy_nll,
                                          tape.constant(x));
      const Tensor g = sg.scores.value();
      const int64_t d = g.numel();
      double norm_q = 0.0;
      for (int64_t i = 0; i < d; ++i) norm_q += std::pow(std::fabs(g[i]), q);
      const double target = std::pow(eps, q) * norm_q;  // eps^q ||g||_q^q
      norm_q = std::pow(norm_q, 1.0 / q);

      auto penalty = [&](const std::vector<double>& delta) {
        double s = 0.0;
        for (int64_t i = 0; i < d; ++i)
          s += std::fabs(delta[static_cast<size_t>(i)] * g[i]);
        return std::pow(s, q);
      };
      // Hoelder maximizer: delta_i = eps sign(g_i) (|g_i| / ||g||_q)^(q-1)
      std::vector<double> star(static_cast<size_t>(d));
      for (int64_t i = 0; i < d; ++i) {
        const double s = g[i] > 0 ? 1.0 : (g[i] < 0 ? -1.0 : 0.0);
        star[static_cast<size_t>(i)] =
            eps * s * std::pow(std::fabs(g[i]) / norm_q, q - 1.0);
      }
      const double achieved = penalty(star);
      worst_gap = std::max(worst_gap, std::fabs(achieved - target));
      // random feasible points in the conjugate-norm ball
      std::vector<double> delta(static_cast<size_t>(d));
      for (int trial = 0; trial < random_trials; ++trial) {
        if (q == 1.0) {
          for (double& v : delta) v = rng.uniform(-eps, eps);
        } else {
          double norm2 = 0.0;
          for (double& v : delta) {
            v = rng.normal();
            norm2 += v * v;
          }
          const double radius =
              eps * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
          for (double& v : delta) v *= radius / std::sqrt(norm2);
        }
        if (penalty(delta) > achieved + 1e-12) ++exceed;
      }
    }
  }
  const bool pass = worst_gap <= 1e-8 && exceed == 0;
  return detail::make_result(
      "input-gradient recovery via the Hoelder maximizer", pass,
      detail::fmt("worst |achieved - eps^q||g||_q^q| = %.3g (tol 1e-8); "
                  "%d random exceedances (need 0)",
                  worst_gap, exceed));
}

// loss-output surrogate dominates the madry inner value pointwise
inline CheckResult check_prop3(int trials = 10000) {
  int violations = 0;
  double worst = 0.0;
  Rng rng(6700417u);
  Network net = detail::random_smooth_net(rng, {4, 8, 3});
  for (int trial = 0; trial < trials; ++trial) {
    if (trial % 2000 == 0) net = detail::random_smooth_net(rng, {4, 8, 3});
    Tensor x = oracle::random_tensor(rng, {1, 4}, 0.0, 1.0);
    Tensor xp = oracle::random_tensor(rng, {1, 4}, 0.0, 1.0);
    std::vector<int> y{static_cast<int>(rng.uniform_int(3))};
    Tape tape;
    Network::Bound bound = net.bind(tape, false);
    ObjectiveSpec lo, madry;
    lo.variant = ObjectiveVariant::loss_output;
    madry.variant = ObjectiveVariant::madry;
    madry.size = SizeFunction::sum();
    const double vl = inner_value(tape, lo, net, bound, tape.constant(x),
                                  tape.constant(xp), y).value()[0];
    const double vm = inner_value(tape, madry, net, bound, tape.constant(x),
                                  tape.constant(xp), y).value()[0];
    if (vl < vm) {
      ++violations;
      worst = std::max(worst, vm - vl);
    }
  }
  return detail::make_result(
      "loss-output surrogate dominates the madry value", violations == 0,
      detail::fmt("%d violations over %d trials (worst %.3g)", violations,
                  trials, worst));
}

// one-layer equivalence: corner-enumerated worst-case ||IG||_1 equals
// g(z + eps||w||_1) - g(z); worst-case loss equals the soft-margin form
inline CheckResult check_theorem4(int seeds_per_case = 50) {
  double worst_ig = 0.0, worst_loss = 0.0, worst_route = 0.0;
  for (int d : {2, 3, 4}) {
    for (ScalarLoss g : {ScalarLoss::logistic, ScalarLoss::softplus_hinge}) {
      for (int seed = 1; seed <= seeds_per_case; ++seed) {
        Rng rng(static_cast<uint64_t>(seed) * 2147483647u +
                static_cast<uint64_t>(d) * 97u +
                (g == ScalarLoss::logistic ? 0u : 31u));
        Tensor w = oracle::random_tensor(rng, {static_cast<int64_t>(d)}, -1.0, 1.0);
        Tensor x = oracle::random_tensor(rng, {static_cast<int64_t>(d)}, 0.0, 1.0);
        const int y = rng.uniform() < 0.5 ? -1 : 1;
        const double eps = rng.uniform(0.05, 0.3);
        const OneLayerForms forms = one_layer_closed_form(w, x, y, eps, g);
        const double corner_ig = oracle::corner_max_ig_norm(w, x, y, eps, g);
        const double corner_loss = oracle::corner_max_loss(w, x, y, eps, g);
        double z = 0.0;
        for (int64_t i = 0; i < w.numel(); ++i) z += w[i] * x[i];
        z = -static_cast<double>(y) * z;
        worst_ig = std::max(worst_ig, std::fabs(corner_ig - forms.ig_norm_max));
        worst_loss =
            std::max(worst_loss, std::fabs(corner_loss - forms.robust_loss));
        // strong (one-norm) and weak (sum) instantiations coincide
        worst_route = std::max(
            worst_route,
            std::fabs(corner_ig - (corner_loss - scalar_loss(g, z))));
      }
    }
  }
  const bool pass = worst_ig <= 1e-6 && worst_loss <= 1e-9 && worst_route <= 1e-6;
  return detail::make_result(
      "one-layer equivalence (soft margin)", pass,
      detail::fmt("corner vs closed-form ||IG||: %.3g (tol 1e-6); robust loss: "
                  "%.3g (tol 1e-9); strong==weak route: %.3g (tol 1e-6)",
                  worst_ig, worst_loss, worst_route));
}

// exchange identity: LP over couplings equals the per-row maximization
inline CheckResult check_theorem2(int problems = 100) {
  double worst = 0.0;
  for (int seed = 1; seed <= problems; ++seed) {
    Rng rng(static_cast<uint64_t>(seed) * 179424673u);
    const int n = 2 + static_cast<int>(rng.uniform_int(4));  // 2..5
    const bool zero_diag = seed % 3 != 0;  // also probe beyond the hypothesis
    FiniteDistProblem pr = oracle::random_problem(rng, n, zero_diag);
    for (double gamma : {0.0, rng.uniform(0.0, 2.0), 25.0}) {
      std::vector<double> obj(static_cast<size_t>(n) * n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          obj[static_cast<size_t>(i) * n + j] = pr.d(i, j) - gamma * pr.c(i, j);
      const double lp = detail::solve_transport(pr, obj, false).value;
      const double rowmax = lagrangian_rowmax(pr, gamma);
      worst = std::max(worst, std::fabs(lp - rowmax));
    }
  }
  return detail::make_result(
      "exchange identity: coupling LP == per-row max", worst <= 1e-9,
      detail::fmt("worst |LP - rowmax| = %.3g (tol 1e-9)", worst));
}

// strong duality: breakpoint-scan dual equals the constrained primal, and
// both match vertex enumeration
inline CheckResult check_duality_strong(int problems = 100) {
  double worst_gap = 0.0, worst_vertex = 0.0;
  for (int seed = 1; seed <= problems; ++seed) {
    Rng rng(static_cast<uint64_t>(seed) * 514229u);
    const int n = 2 + static_cast<int>(rng.uniform_int(4));
    FiniteDistProblem pr = oracle::random_problem(rng, n);
    DualResult res = dual_correspondence(pr, pr.rho);
    worst_gap = std::max(worst_gap, std::fabs(res.primal - res.dual));
    worst_vertex = std::max(
        worst_vertex, std::fabs(res.primal - oracle::lp_vertex_oracle(pr)));
  }
  const bool pass = worst_gap <= 1e-9 && worst_vertex <= 1e-9;
  return detail::make_result(
      "strong duality via breakpoint scan", pass,
      detail::fmt("worst |primal-dual| = %.3g; worst |LP-vertex oracle| = %.3g "
                  "(tol 1e-9)",
                  worst_gap, worst_vertex));
}

// sum-instantiation reduction to Wasserstein prediction robustness
inline CheckResult check_prop4(int problems = 100) {
  int failures = 0;
  for (int seed = 1; seed <= problems; ++seed) {
    Rng rng(static_cast<uint64_t>(seed) * 433494437u);
    const int n = 2 + static_cast<int>(rng.uniform_int(3));  // 2..4
    std::vector<double> losses(static_cast<size_t>(n));
    for (double& v : losses) v = rng.uniform(0.0, 2.0);
    FiniteDistProblem base = oracle::random_problem(rng, n);
    std::vector<double> payoff(static_cast<size_t>(n) * n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        payoff[static_cast<size_t>(i) * n + j] =
            losses[static_cast<size_t>(j)] - losses[static_cast<size_t>(i)];
    FiniteDistProblem pr = FiniteDistProblem::make(n, base.p, base.cost,
                                                   payoff, base.rho);
    if (!wasserstein_reduction_check(pr, losses)) ++failures;
  }
  return detail::make_result(
      "reduction to Wasserstein prediction robustness", failures == 0,
      detail::fmt("%d failures over %d problems (tol 1e-9)", failures, problems));
}

// Kendall tau against the O(n^2) oracle (ties included) and top-k against a
// direct set computation
inline CheckResult check_metrics(int vectors = 200) {
  double worst_tau = 0.0;
  int topk_mismatch = 0;
  Rng rng(87178291199ull);
  for (int v = 0; v < vectors; ++v) {
    const size_t n = 2 + rng.uniform_int(300);
    RankVector a, b;
    a.values.resize(n);
    b.values.resize(n);
    const bool quantize = v % 3 == 0;  // force ties
    for (size_t i = 0; i < n; ++i) {
      a.values[i] = quantize ? std::floor(rng.uniform(0.0, 6.0)) : rng.uniform();
      b.values[i] = quantize ? std::floor(rng.uniform(0.0, 6.0)) : rng.uniform();
    }
    bool degenerate = true;
    for (size_t i = 1; i < n && degenerate; ++i)
      if (a.values[i] != a.values[0] || b.values[i] != b.values[0])
        degenerate = false;
    if (degenerate) a.values[0] += 1.0;
    // still possible that one side is fully tied; patch deterministically
    auto all_tied = [](const std::vector<double>& vs) {
      for (double x : vs)
        if (x != vs[0]) return false;
      return true;
    };
    if (all_tied(a.values)) a.values[0] += 1.0;
    if (all_tied(b.values)) b.values[0] += 1.0;

    worst_tau = std::max(worst_tau, std::fabs(kendall_tau(a, b) -
                                              oracle::kendall_brute(a, b)));
    const int64_t k = 1 + static_cast<int64_t>(
                              rng.uniform_int(static_cast<uint64_t>(n)));
    // direct oracle: sets of the k best by (value, -index)
    auto topset = [&](const std::vector<double>& vs) {
      std::vector<std::pair<double, int64_t>> key;
      for (size_t i = 0; i < vs.size(); ++i)
        key.push_back({vs[i], -static_cast<int64_t>(i)});
      std::sort(key.rbegin(), key.rend());
      std::vector<int64_t> out;
      for (int64_t i = 0; i < k; ++i) out.push_back(-key[static_cast<size_t>(i)].second);
      std::sort(out.begin(), out.end());
      return out;
    };
    auto sa = topset(a.values), sb = topset(b.values);
    std::vector<int64_t> inter;
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(),
                          std::back_inserter(inter));
    const double want =
        static_cast<double>(inter.size()) / static_cast<double>(k);
    if (topk_intersection(a, b, k) != want) ++topk_mismatch;
  }
  const bool pass = worst_tau <= 1e-12 && topk_mismatch == 0;
  return detail::make_result(
      "metrics vs brute-force oracles", pass,
      detail::fmt("worst |tau - brute| = %.3g (tol 1e-12); %d top-k mismatches",
                  worst_tau, topk_mismatch));
}

inline std::vector<CheckResult> run_verification_suites(std::ostream* out) {
  std::vector<CheckResult> results;
  auto run = [&](CheckResult r) {
    if (out)
      (*out) << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail
             << "\n";
    results.push_back(std::move(r));
  };
  run(check_autodiff_primitives());
  run(check_autodiff_second_order());
  run(check_completeness());
  run(check_prop1());
  run(check_prop2());
  run(check_prop3());
  run(check_theorem4());
  run(check_theorem2());
  run(check_duality_strong());
  run(check_prop4());
  run(check_metrics());
  return results;
}

}  // namespace robattr
