#pragma once

// Reverse-mode autodiff on an eager tape. Differentiation emits new nodes on
// the same tape, so gradients are themselves differentiable (double
// backprop). Conventions for kinks: d|x|/dx := 0 at 0, relu'(0) := 0, and the
// second derivative of abs/relu is 0 everywhere; masks and signs captured at
// vjp time are constants of the graph.

#include <array>
#include <cstdint>
#include <deque>
#include <vector>

#include "robattr/error.hpp"
#include "robattr/tensor.hpp"

namespace robattr {

enum class Op : uint8_t {
  constant,
  leaf,
  stop_grad,
  grad_anchor,
  add,
  sub,
  mul,
  div,
  neg,
  matmul,
  transpose,
  sum_all,
  row_sum,
  col_sum,
  row_max,
  max_all,
  abs,
  exp,
  log,
  relu,
  softplus,
  sigmoid,
  pow_const,
  clamp,
  maximum,
  reshape,
  tile_rows,
  sum_tiles,
  conv2d,
  conv2d_dx,
  conv2d_dw,
  maxpool2,
  pool_scatter,
  pool_gather,
};

class Tape;

struct Node {
  Tape* tape = nullptr;
  int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

namespace detail {

struct Rec {
  Op op = Op::constant;
  std::array<int32_t, 2> parent{-1, -1};
  Tensor value;
  bool requires_grad = false;
  double a0 = 0.0, a1 = 0.0;  // clamp bounds / pow exponent
  int64_t i0 = 0;             // tile count
  Shape aux_shape;            // pool_scatter target shape
};

}  // namespace detail

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Node leaf(Tensor v) {
    return emit({Op::leaf, {-1, -1}, std::move(v), true});
  }
  Node constant(Tensor v) {
    return emit({Op::constant, {-1, -1}, std::move(v), false});
  }
  Node scalar(double v) { return constant(Tensor::scalar(v)); }

  size_t size() const { return recs_.size(); }
  int generation() const { return generation_; }
  void reset() {
    recs_.clear();
    generation_ = 0;
  }

  const detail::Rec& rec(int32_t id) const { return recs_[static_cast<size_t>(id)]; }

  Node emit(detail::Rec r) {
    recs_.push_back(std::move(r));
    return Node{this, static_cast<int32_t>(recs_.size() - 1)};
  }

  // d(output)/d(wrt) as differentiable nodes. output must be scalar; a wrt
  // node not reachable from output yields a zero tensor of its shape.
  std::vector<Node> gradient(Node output, const std::vector<Node>& wrt);

 private:
  void backprop(int32_t id, Node g, const std::vector<uint8_t>& need,
                std::vector<int32_t>& adj);
  void accumulate(int32_t pid, Node g, const std::vector<uint8_t>& need,
                  std::vector<int32_t>& adj);

  std::deque<detail::Rec> recs_;
  int generation_ = 0;
};

inline const Tensor& Node::value() const { return tape->rec(id).value; }
inline bool Node::requires_grad() const { return tape->rec(id).requires_grad; }

namespace detail {

inline void check_same_tape(const char* op, Node a, Node b) {
  ROBATTR_REQUIRE(a.tape == b.tape, op, ": operands from different tapes");
}

inline Node emit_binary(const char* name, Op op, Node a, Node b, Tensor value) {
  check_same_tape(name, a, b);
  Rec r{op, {a.id, b.id}, std::move(value),
        a.requires_grad() || b.requires_grad()};
  return a.tape->emit(std::move(r));
}

inline Node emit_unary(Op op, Node a, Tensor value) {
  Rec r{op, {a.id, -1}, std::move(value), a.requires_grad()};
  return a.tape->emit(std::move(r));
}

}  // namespace detail

// ---- elementwise binary (broadcasting: equal | scalar | row | column) ----

inline Node add(Node a, Node b) {
  return detail::emit_binary("add", Op::add, a, b,
      detail::binary_broadcast("add", a.value(), b.value(),
                               [](double x, double y) { return x + y; }));
}
inline Node sub(Node a, Node b) {
  return detail::emit_binary("sub", Op::sub, a, b,
      detail::binary_broadcast("sub", a.value(), b.value(),
                               [](double x, double y) { return x - y; }));
}
inline Node mul(Node a, Node b) {
  return detail::emit_binary("mul", Op::mul, a, b,
      detail::binary_broadcast("mul", a.value(), b.value(),
                               [](double x, double y) { return x * y; }));
}
inline Node divide(Node a, Node b) {
  return detail::emit_binary("div", Op::div, a, b,
      detail::binary_broadcast("div", a.value(), b.value(),
                               [](double x, double y) { return x / y; }));
}
inline Node maximum(Node a, Node b) {
  return detail::emit_binary("maximum", Op::maximum, a, b,
      detail::binary_broadcast("maximum", a.value(), b.value(),
                               [](double x, double y) { return x > y ? x : y; }));
}

inline Node neg(Node a) {
  return detail::emit_unary(Op::neg, a,
      detail::unary_map(a.value(), [](double x) { return -x; }));
}

// ---- matmul / transpose ----

inline Node matmul(Node a, Node b) {
  return detail::emit_binary("matmul", Op::matmul, a, b,
                             detail::matmul_val(a.value(), b.value()));
}
inline Node transpose(Node a) {
  return detail::emit_unary(Op::transpose, a, detail::transpose_val(a.value()));
}

// ---- reductions ----

inline Node sum_all(Node a) {
  double s = 0.0;
  const double* p = a.value().data();
  for (int64_t i = 0; i < a.value().numel(); ++i) s += p[i];
  return detail::emit_unary(Op::sum_all, a, Tensor::scalar(s));
}

inline Node row_sum(Node a) {
  const Tensor& v = a.value();
  ROBATTR_REQUIRE(v.rank() == 2, "row_sum: needs rank-2, got ",
                  shape_str(v.shape()));
  Tensor out(Shape{v.extent(0), 1});
  for (int64_t i = 0; i < v.extent(0); ++i) {
    double s = 0.0;
    const double* p = v.data() + i * v.extent(1);
    for (int64_t j = 0; j < v.extent(1); ++j) s += p[j];
    out[i] = s;
  }
  return detail::emit_unary(Op::row_sum, a, std::move(out));
}

inline Node col_sum(Node a) {
  const Tensor& v = a.value();
  ROBATTR_REQUIRE(v.rank() == 2, "col_sum: needs rank-2, got ",
                  shape_str(v.shape()));
  Tensor out(Shape{1, v.extent(1)});
  for (int64_t i = 0; i < v.extent(0); ++i) {
    const double* p = v.data() + i * v.extent(1);
    for (int64_t j = 0; j < v.extent(1); ++j) out[j] += p[j];
  }
  return detail::emit_unary(Op::col_sum, a, std::move(out));
}

inline Node row_max(Node a) {
  const Tensor& v = a.value();
  ROBATTR_REQUIRE(v.rank() == 2 && v.extent(1) > 0,
                  "row_max: needs non-empty rank-2, got ", shape_str(v.shape()));
  Tensor out(Shape{v.extent(0), 1});
  for (int64_t i = 0; i < v.extent(0); ++i) {
    const double* p = v.data() + i * v.extent(1);
    double m = p[0];
    for (int64_t j = 1; j < v.extent(1); ++j)
      if (p[j] > m) m = p[j];
    out[i] = m;
  }
  return detail::emit_unary(Op::row_max, a, std::move(out));
}

inline Node max_all(Node a) {
  const Tensor& v = a.value();
  ROBATTR_REQUIRE(v.numel() > 0, "max_all: empty tensor");
  double m = v[0];
  for (int64_t i = 1; i < v.numel(); ++i)
    if (v[i] > m) m = v[i];
  return detail::emit_unary(Op::max_all, a, Tensor::scalar(m));
}

// ---- elementwise unary ----

inline Node abs(Node a) {
  return detail::emit_unary(Op::abs, a,
      detail::unary_map(a.value(), [](double x) { return std::fabs(x); }));
}
inline Node exp(Node a) {
  return detail::emit_unary(Op::exp, a,
      detail::unary_map(a.value(), [](double x) { return std::exp(x); }));
}
inline Node log(Node a) {
  return detail::emit_unary(Op::log, a,
      detail::unary_map(a.value(), [](double x) { return std::log(x); }));
}
inline Node relu(Node a) {
  return detail::emit_unary(Op::relu, a,
      detail::unary_map(a.value(), [](double x) { return x > 0 ? x : 0.0; }));
}
inline Node softplus(Node a) {
  return detail::emit_unary(Op::softplus, a,
      detail::unary_map(a.value(), detail::softplus_scalar));
}
inline Node sigmoid(Node a) {
  return detail::emit_unary(Op::sigmoid, a,
      detail::unary_map(a.value(), detail::sigmoid_scalar));
}
inline Node pow_const(Node a, double q) {
  detail::Rec r{Op::pow_const, {a.id, -1},
                detail::unary_map(a.value(), [q](double x) { return std::pow(x, q); }),
                a.requires_grad()};
  r.a0 = q;
  return a.tape->emit(std::move(r));
}
inline Node clamp(Node a, double lo, double hi) {
  ROBATTR_REQUIRE(lo <= hi, "clamp: lo ", lo, " > hi ", hi);
  detail::Rec r{Op::clamp, {a.id, -1},
                detail::unary_map(a.value(), [lo, hi](double x) {
                  return x < lo ? lo : (x > hi ? hi : x);
                }),
                a.requires_grad()};
  r.a0 = lo;
  r.a1 = hi;
  return a.tape->emit(std::move(r));
}

// ---- structure ----

inline Node reshape(Node a, Shape target) {
  ROBATTR_REQUIRE(shape_numel(target) == a.value().numel(),
                  "reshape: cannot view ", shape_str(a.shape()), " as ",
                  shape_str(target));
  Tensor v = a.value();
  Tensor out(std::move(target), std::vector<double>(v.data(), v.data() + v.numel()));
  return detail::emit_unary(Op::reshape, a, std::move(out));
}

inline Node tile_rows(Node a, int64_t m) {
  const Tensor& v = a.value();
  ROBATTR_REQUIRE(v.rank() == 2 && m >= 1, "tile_rows: needs rank-2 and m>=1");
  const int64_t b = v.extent(0), n = v.extent(1);
  Tensor out(Shape{m * b, n});
  for (int64_t k = 0; k < m; ++k)
    std::copy(v.data(), v.data() + b * n, out.data() + k * b * n);
  detail::Rec r{Op::tile_rows, {a.id, -1}, std::move(out), a.requires_grad()};
  r.i0 = m;
  return a.tape->emit(std::move(r));
}

inline Node sum_tiles(Node a, int64_t m) {
  const Tensor& v = a.value();
  ROBATTR_REQUIRE(v.rank() == 2 && m >= 1 && v.extent(0) % m == 0,
                  "sum_tiles: shape ", shape_str(v.shape()),
                  " not divisible into ", m, " tiles");
  const int64_t b = v.extent(0) / m, n = v.extent(1);
  Tensor out(Shape{b, n});
  for (int64_t k = 0; k < m; ++k) {
    const double* src = v.data() + k * b * n;
    double* dst = out.data();
    for (int64_t i = 0; i < b * n; ++i) dst[i] += src[i];
  }
  detail::Rec r{Op::sum_tiles, {a.id, -1}, std::move(out), a.requires_grad()};
  r.i0 = m;
  return a.tape->emit(std::move(r));
}

// Value passthrough; gradient flow through this edge is cut.
inline Node stop_gradient(Node a) {
  detail::Rec r{Op::stop_grad, {a.id, -1}, a.value(), false};
  return a.tape->emit(std::move(r));
}

// Value passthrough that always accepts an adjoint, so d(expr)/d(anchor) is
// well-defined even when the anchored subtree is built from constants.
inline Node grad_anchor(Node a) {
  detail::Rec r{Op::grad_anchor, {a.id, -1}, a.value(), true};
  return a.tape->emit(std::move(r));
}

// ---- conv / pooling (stride 1, valid padding; 2x2 pool) ----

namespace detail {

inline void conv_shapes(const char* who, const Tensor& x, const Tensor& w,
                        int64_t& B, int64_t& C, int64_t& H, int64_t& W,
                        int64_t& F, int64_t& K, int64_t& Ho, int64_t& Wo) {
  ROBATTR_REQUIRE(x.rank() == 4 && w.rank() == 4, who,
                  ": needs rank-4 input and kernel, got ", shape_str(x.shape()),
                  " and ", shape_str(w.shape()));
  B = x.extent(0); C = x.extent(1); H = x.extent(2); W = x.extent(3);
  F = w.extent(0); K = w.extent(2);
  ROBATTR_REQUIRE(w.extent(1) == C && w.extent(3) == K, who,
                  ": kernel shape ", shape_str(w.shape()),
                  " incompatible with input ", shape_str(x.shape()));
  Ho = H - K + 1;
  Wo = W - K + 1;
  ROBATTR_REQUIRE(Ho >= 1 && Wo >= 1, who, ": kernel larger than input");
}

inline Tensor conv2d_val(const Tensor& x, const Tensor& w) {
  int64_t B, C, H, W, F, K, Ho, Wo;
  conv_shapes("conv2d", x, w, B, C, H, W, F, K, Ho, Wo);
  Tensor y(Shape{B, F, Ho, Wo});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t f = 0; f < F; ++f)
      for (int64_t i = 0; i < Ho; ++i)
        for (int64_t j = 0; j < Wo; ++j) {
          double s = 0.0;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t p = 0; p < K; ++p)
              for (int64_t q = 0; q < K; ++q)
                s += x[((b * C + c) * H + i + p) * W + j + q] *
                     w[((f * C + c) * K + p) * K + q];
          y[((b * F + f) * Ho + i) * Wo + j] = s;
        }
  return y;
}

// adjoint of conv2d w.r.t. its input: g is y-shaped, result is x-shaped
inline Tensor conv2d_dx_val(const Tensor& g, const Tensor& w) {
  ROBATTR_REQUIRE(g.rank() == 4 && w.rank() == 4, "conv2d_dx: rank-4 required");
  const int64_t B = g.extent(0), F = g.extent(1), Ho = g.extent(2), Wo = g.extent(3);
  const int64_t C = w.extent(1), K = w.extent(2);
  ROBATTR_REQUIRE(w.extent(0) == F, "conv2d_dx: filter counts differ");
  const int64_t H = Ho + K - 1, W = Wo + K - 1;
  Tensor dx(Shape{B, C, H, W});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t f = 0; f < F; ++f)
      for (int64_t i = 0; i < Ho; ++i)
        for (int64_t j = 0; j < Wo; ++j) {
          const double gv = g[((b * F + f) * Ho + i) * Wo + j];
          if (gv == 0.0) continue;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t p = 0; p < K; ++p)
              for (int64_t q = 0; q < K; ++q)
                dx[((b * C + c) * H + i + p) * W + j + q] +=
                    gv * w[((f * C + c) * K + p) * K + q];
        }
  return dx;
}

// adjoint of conv2d w.r.t. its kernel
inline Tensor conv2d_dw_val(const Tensor& x, const Tensor& g) {
  ROBATTR_REQUIRE(x.rank() == 4 && g.rank() == 4, "conv2d_dw: rank-4 required");
  const int64_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
  const int64_t F = g.extent(1), Ho = g.extent(2), Wo = g.extent(3);
  ROBATTR_REQUIRE(g.extent(0) == B, "conv2d_dw: batch sizes differ");
  const int64_t K = H - Ho + 1;
  ROBATTR_REQUIRE(W - Wo + 1 == K, "conv2d_dw: inconsistent spatial extents");
  Tensor dw(Shape{F, C, K, K});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t f = 0; f < F; ++f)
      for (int64_t i = 0; i < Ho; ++i)
        for (int64_t j = 0; j < Wo; ++j) {
          const double gv = g[((b * F + f) * Ho + i) * Wo + j];
          if (gv == 0.0) continue;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t p = 0; p < K; ++p)
              for (int64_t q = 0; q < K; ++q)
                dw[((f * C + c) * K + p) * K + q] +=
                    gv * x[((b * C + c) * H + i + p) * W + j + q];
        }
  return dw;
}

}  // namespace detail

inline Node conv2d(Node x, Node w) {
  return detail::emit_binary("conv2d", Op::conv2d, x, w,
                             detail::conv2d_val(x.value(), w.value()));
}
inline Node conv2d_dx(Node g, Node w) {
  return detail::emit_binary("conv2d_dx", Op::conv2d_dx, g, w,
                             detail::conv2d_dx_val(g.value(), w.value()));
}
inline Node conv2d_dw(Node x, Node g) {
  return detail::emit_binary("conv2d_dw", Op::conv2d_dw, x, g,
                             detail::conv2d_dw_val(x.value(), g.value()));
}

inline Node maxpool2(Node x) {
  const Tensor& v = x.value();
  ROBATTR_REQUIRE(v.rank() == 4 && v.extent(2) % 2 == 0 && v.extent(3) % 2 == 0,
                  "maxpool2: needs rank-4 with even spatial extents, got ",
                  shape_str(v.shape()));
  const int64_t B = v.extent(0), C = v.extent(1), H = v.extent(2), W = v.extent(3);
  Tensor y(Shape{B, C, H / 2, W / 2});
  Tensor idx(Shape{B, C, H / 2, W / 2});
  int64_t o = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < H; i += 2)
        for (int64_t j = 0; j < W; j += 2) {
          int64_t base = ((b * C + c) * H + i) * W + j;
          int64_t best = base;
          double m = v[base];
          for (int64_t p = 0; p < 2; ++p)
            for (int64_t q = 0; q < 2; ++q) {
              const int64_t at = base + p * W + q;
              if (v[at] > m) { m = v[at]; best = at; }
            }
          y[o] = m;
          idx[o] = static_cast<double>(best);
          ++o;
        }
  Node idx_node = x.tape->constant(std::move(idx));
  detail::Rec r{Op::maxpool2, {x.id, idx_node.id}, std::move(y),
                x.requires_grad()};
  return x.tape->emit(std::move(r));
}

// scatter g (pooled shape) into a zero tensor of shape `target` at `idx`
inline Node pool_scatter(Node g, Node idx, Shape target) {
  const Tensor& gv = g.value();
  const Tensor& iv = idx.value();
  ROBATTR_REQUIRE(same_shape(gv, iv), "pool_scatter: index/value shape mismatch");
  Tensor out(target);
  for (int64_t i = 0; i < gv.numel(); ++i)
    out[static_cast<int64_t>(iv[i])] += gv[i];
  detail::Rec r{Op::pool_scatter, {g.id, idx.id}, std::move(out),
                g.requires_grad()};
  r.aux_shape = std::move(target);
  return g.tape->emit(std::move(r));
}

inline Node pool_gather(Node s, Node idx) {
  const Tensor& sv = s.value();
  const Tensor& iv = idx.value();
  Tensor out(iv.shape());
  for (int64_t i = 0; i < iv.numel(); ++i)
    out[i] = sv[static_cast<int64_t>(iv[i])];
  detail::Rec r{Op::pool_gather, {s.id, idx.id}, std::move(out),
                s.requires_grad()};
  return s.tape->emit(std::move(r));
}

// ---- operators & scalar sugar ----

inline Node operator+(Node a, Node b) { return add(a, b); }
inline Node operator-(Node a, Node b) { return sub(a, b); }
inline Node operator*(Node a, Node b) { return mul(a, b); }
inline Node operator/(Node a, Node b) { return divide(a, b); }
inline Node operator-(Node a) { return neg(a); }
inline Node operator+(Node a, double s) { return add(a, a.tape->scalar(s)); }
inline Node operator+(double s, Node a) { return add(a.tape->scalar(s), a); }
inline Node operator-(Node a, double s) { return sub(a, a.tape->scalar(s)); }
inline Node operator-(double s, Node a) { return sub(a.tape->scalar(s), a); }
inline Node operator*(Node a, double s) { return mul(a, a.tape->scalar(s)); }
inline Node operator*(double s, Node a) { return mul(a.tape->scalar(s), a); }
inline Node operator/(Node a, double s) { return divide(a, a.tape->scalar(s)); }
inline Node operator/(double s, Node a) { return divide(a.tape->scalar(s), a); }

inline Node mean_all(Node a) {
  return sum_all(a) * (1.0 / static_cast<double>(a.value().numel()));
}
inline Node one_norm_all(Node a) { return sum_all(abs(a)); }
inline Node row_one_norm(Node a) { return row_sum(abs(a)); }

// ---- gradient implementation ----

namespace detail {

inline Tensor sign_const(const Tensor& v) {
  return unary_map(v, [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}
inline Tensor step_const(const Tensor& v) {
  return unary_map(v, [](double x) { return x > 0 ? 1.0 : 0.0; });
}
inline Tensor interval_mask_const(const Tensor& v, double lo, double hi) {
  return unary_map(v, [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}
inline Tensor row_argmax_onehot(const Tensor& v) {
  Tensor mask(v.shape());
  for (int64_t i = 0; i < v.extent(0); ++i) {
    const double* p = v.data() + i * v.extent(1);
    int64_t arg = 0;
    for (int64_t j = 1; j < v.extent(1); ++j)
      if (p[j] > p[arg]) arg = j;
    mask[i * v.extent(1) + arg] = 1.0;
  }
  return mask;
}
inline Tensor argmax_onehot(const Tensor& v) {
  Tensor mask(v.shape());
  int64_t arg = 0;
  for (int64_t i = 1; i < v.numel(); ++i)
    if (v[i] > v[arg]) arg = i;
  mask[arg] = 1.0;
  return mask;
}
inline Tensor ge_mask(const Tensor& a, const Tensor& b) {
  return binary_broadcast("ge_mask", a, b,
                          [](double x, double y) { return x >= y ? 1.0 : 0.0; });
}

// Reduce an adjoint back to an operand's shape after broadcasting. The
// target is taken by value: emitting nodes may reallocate the tape.
inline Node reduce_to(Node g, Shape target) {
  if (g.shape() == target) return g;
  if (shape_numel(target) == 1) return reshape(sum_all(g), target);
  auto dims = [](const Shape& s) -> std::pair<int64_t, int64_t> {
    if (s.empty()) return {1, 1};
    if (s.size() == 1) return {1, s[0]};
    return {s[0], s[1]};
  };
  auto [gr, gc] = dims(g.shape());
  auto [tr, tc] = dims(target);
  Node out = g;
  if (tr == gr && tc == 1 && gc != 1) {
    out = row_sum(out);
  } else if (tr == 1 && tc == gc && gr != 1) {
    out = col_sum(out);
  } else {
    ROBATTR_REQUIRE(tr == gr && tc == gc, "gradient: cannot reduce ",
                    shape_str(g.shape()), " to ", shape_str(target));
  }
  if (out.shape() != target) out = reshape(out, target);
  return out;
}

}  // namespace detail

inline void Tape::accumulate(int32_t pid, Node g,
                             const std::vector<uint8_t>& need,
                             std::vector<int32_t>& adj) {
  if (pid < 0 || pid >= static_cast<int32_t>(need.size()) || !need[pid]) return;
  if (adj[pid] < 0) {
    adj[pid] = g.id;
  } else {
    adj[pid] = add(Node{this, adj[pid]}, g).id;
  }
}

inline void Tape::backprop(int32_t id, Node g,
                           const std::vector<uint8_t>& need,
                           std::vector<int32_t>& adj) {
  using namespace detail;
  // copy scalar metadata up front: emitting vjp nodes reallocates recs_
  const Rec& rec_ref = recs_[static_cast<size_t>(id)];
  const Op op = rec_ref.op;
  const int32_t pa = rec_ref.parent[0], pb = rec_ref.parent[1];
  const double a0 = rec_ref.a0, a1 = rec_ref.a1;
  const int64_t i0 = rec_ref.i0;
  Node self{this, id};
  auto parent_node = [&](int32_t p) { return Node{this, p}; };
  auto pshape = [&](int32_t p) -> Shape {
    return recs_[static_cast<size_t>(p)].value.shape();
  };
  auto pvalue = [&](int32_t p) -> const Tensor& {
    return recs_[static_cast<size_t>(p)].value;
  };
  auto want = [&](int32_t p) {
    return p >= 0 && p < static_cast<int32_t>(need.size()) && need[p];
  };

  switch (op) {
    case Op::constant:
    case Op::leaf:
    case Op::stop_grad:
      break;
    case Op::grad_anchor:
    case Op::reshape:
      if (want(pa))
        accumulate(pa, op == Op::reshape ? reshape(g, pshape(pa)) : g, need, adj);
      break;
    case Op::add:
      if (want(pa)) accumulate(pa, reduce_to(g, pshape(pa)), need, adj);
      if (want(pb)) accumulate(pb, reduce_to(g, pshape(pb)), need, adj);
      break;
    case Op::sub:
      if (want(pa)) accumulate(pa, reduce_to(g, pshape(pa)), need, adj);
      if (want(pb)) accumulate(pb, reduce_to(neg(g), pshape(pb)), need, adj);
      break;
    case Op::mul:
      if (want(pa))
        accumulate(pa, reduce_to(mul(g, parent_node(pb)), pshape(pa)), need, adj);
      if (want(pb))
        accumulate(pb, reduce_to(mul(g, parent_node(pa)), pshape(pb)), need, adj);
      break;
    case Op::div: {
      Node a = parent_node(pa), b = parent_node(pb);
      if (want(pa)) accumulate(pa, reduce_to(divide(g, b), pshape(pa)), need, adj);
      if (want(pb))
        accumulate(pb, reduce_to(neg(divide(mul(g, a), mul(b, b))), pshape(pb)),
                   need, adj);
      break;
    }
    case Op::neg:
      if (want(pa)) accumulate(pa, neg(g), need, adj);
      break;
    case Op::matmul:
      if (want(pa)) accumulate(pa, matmul(g, transpose(parent_node(pb))), need, adj);
      if (want(pb)) accumulate(pb, matmul(transpose(parent_node(pa)), g), need, adj);
      break;
    case Op::transpose:
      if (want(pa)) accumulate(pa, transpose(g), need, adj);
      break;
    case Op::sum_all:
      if (want(pa))
        accumulate(pa, mul(constant(Tensor::ones(pshape(pa))), g), need, adj);
      break;
    case Op::row_sum:
    case Op::col_sum:
      if (want(pa))
        accumulate(pa, mul(constant(Tensor::ones(pshape(pa))), g), need, adj);
      break;
    case Op::row_max:
      if (want(pa))
        accumulate(pa,
                   mul(constant(row_argmax_onehot(pvalue(pa))), g), need, adj);
      break;
    case Op::max_all:
      if (want(pa))
        accumulate(pa, mul(constant(argmax_onehot(pvalue(pa))), g), need, adj);
      break;
    case Op::abs:
      if (want(pa))
        accumulate(pa, mul(g, constant(sign_const(pvalue(pa)))), need, adj);
      break;
    case Op::exp:
      if (want(pa)) accumulate(pa, mul(g, self), need, adj);
      break;
    case Op::log:
      if (want(pa)) accumulate(pa, divide(g, parent_node(pa)), need, adj);
      break;
    case Op::relu:
      if (want(pa))
        accumulate(pa, mul(g, constant(step_const(pvalue(pa)))), need, adj);
      break;
    case Op::softplus:
      if (want(pa)) accumulate(pa, mul(g, sigmoid(parent_node(pa))), need, adj);
      break;
    case Op::sigmoid:
      if (want(pa))
        accumulate(pa, mul(g, mul(self, sub(scalar(1.0), self))), need, adj);
      break;
    case Op::pow_const:
      if (want(pa)) {
        if (a0 == 1.0) {
          accumulate(pa, g, need, adj);
        } else {
          Node d = mul(pow_const(parent_node(pa), a0 - 1.0), scalar(a0));
          accumulate(pa, mul(g, d), need, adj);
        }
      }
      break;
    case Op::clamp:
      if (want(pa))
        accumulate(pa,
                   mul(g, constant(interval_mask_const(pvalue(pa), a0, a1))),
                   need, adj);
      break;
    case Op::maximum:
      if (want(pa) || want(pb)) {
        Tensor ma = ge_mask(pvalue(pa), recs_[pb].value);
        if (want(pa))
          accumulate(pa, reduce_to(mul(g, constant(ma)), pshape(pa)), need, adj);
        if (want(pb)) {
          Tensor mb = unary_map(ma, [](double x) { return 1.0 - x; });
          accumulate(pb, reduce_to(mul(g, constant(std::move(mb))), pshape(pb)),
                     need, adj);
        }
      }
      break;
    case Op::tile_rows:
      if (want(pa)) accumulate(pa, sum_tiles(g, i0), need, adj);
      break;
    case Op::sum_tiles:
      if (want(pa)) accumulate(pa, tile_rows(g, i0), need, adj);
      break;
    case Op::conv2d:
      if (want(pa)) accumulate(pa, conv2d_dx(g, parent_node(pb)), need, adj);
      if (want(pb)) accumulate(pb, conv2d_dw(parent_node(pa), g), need, adj);
      break;
    case Op::conv2d_dx:
      if (want(pa)) accumulate(pa, conv2d(g, parent_node(pb)), need, adj);
      if (want(pb)) accumulate(pb, conv2d_dw(g, parent_node(pa)), need, adj);
      break;
    case Op::conv2d_dw:
      if (want(pa)) accumulate(pa, conv2d_dx(parent_node(pb), g), need, adj);
      if (want(pb)) accumulate(pb, conv2d(parent_node(pa), g), need, adj);
      break;
    case Op::maxpool2:
      if (want(pa))
        accumulate(pa, pool_scatter(g, parent_node(pb), pshape(pa)), need, adj);
      break;
    case Op::pool_scatter:
      if (want(pa)) accumulate(pa, pool_gather(g, parent_node(pb)), need, adj);
      break;
    case Op::pool_gather:
      if (want(pa))
        accumulate(pa, pool_scatter(g, parent_node(pb), pshape(pa)), need, adj);
      break;
  }
}

inline std::vector<Node> Tape::gradient(Node output,
                                        const std::vector<Node>& wrt) {
  ROBATTR_REQUIRE(output.tape == this, "gradient: output from another tape");
  ROBATTR_REQUIRE(output.value().numel() == 1,
                  "gradient: output must be scalar, got ",
                  shape_str(output.shape()));
  for (const Node& w : wrt) {
    ROBATTR_REQUIRE(w.tape == this, "gradient: wrt node from another tape");
    ROBATTR_REQUIRE(w.requires_grad(),
                    "gradient: wrt node does not require gradients");
  }
  ++generation_;

  const int32_t top = output.id;
  std::vector<uint8_t> need(static_cast<size_t>(top) + 1, 0);
  if (recs_[static_cast<size_t>(top)].requires_grad) need[top] = 1;
  for (int32_t id = top; id >= 0; --id) {
    if (!need[id]) continue;
    const detail::Rec& r = recs_[static_cast<size_t>(id)];
    if (r.op == Op::stop_grad) continue;
    for (int32_t p : r.parent)
      if (p >= 0 && recs_[static_cast<size_t>(p)].requires_grad) need[p] = 1;
  }

  std::vector<int32_t> adj(static_cast<size_t>(top) + 1, -1);
  if (need[top]) adj[top] = constant(Tensor::ones(output.shape())).id;
  for (int32_t id = top; id >= 0; --id) {
    if (!need[id] || adj[id] < 0) continue;
    backprop(id, Node{this, adj[id]}, need, adj);
  }

  std::vector<Node> out;
  out.reserve(wrt.size());
  for (const Node& w : wrt) {
    if (w.id <= top && adj[w.id] >= 0) {
      out.push_back(Node{this, adj[w.id]});
    } else {
      out.push_back(constant(Tensor::zeros(w.shape())));
    }
  }
  return out;
}

}  // namespace robattr
