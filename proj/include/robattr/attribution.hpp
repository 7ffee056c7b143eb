#pragma once

// Integrated Gradients along the straightline path, approximated by the
// left-endpoint Riemann sum with m segments:
//   scores_i = ((x'_i - x_i)/m) * sum_{k=0}^{m-1} df/dx_i at x + (k/m)(x'-x)
// The m path points are stacked into the row dimension so one forward and one
// gradient pass cover the whole sum. Results stay differentiable w.r.t. x,
// x' and the parameters, which is what the training objectives need.

#include <cstdio>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "robattr/autodiff.hpp"
#include "robattr/nn.hpp"

namespace robattr {

struct PathSpec {
  enum class Kind { straightline };
  Kind kind = Kind::straightline;
  int m = 16;

  void validate() const {
    ROBATTR_REQUIRE(m >= 1, "path: m must be >= 1, got ", m);
  }
};

struct SizeFunction {
  enum class Tag { sum, one_norm, one_norm_pow };
  Tag tag = Tag::one_norm;
  double q = 1.0;

  void validate() const {
    if (tag == Tag::one_norm_pow)
      ROBATTR_REQUIRE(q >= 1.0, "size: exponent q must be >= 1, got ", q);
  }
  static SizeFunction sum() { return {Tag::sum, 1.0}; }
  static SizeFunction one_norm() { return {Tag::one_norm, 1.0}; }
  static SizeFunction one_norm_pow(double q) { return {Tag::one_norm_pow, q}; }
};

struct AttributionMap {
  std::string layer;   // "input", a named layer, or "loss"
  Node scores;         // {B, features}, differentiable
  Node baseline_value; // {B,1}, f(x)
  Node target_value;   // {B,1}, f(x')
};

namespace detail {

inline Tensor path_offsets(int64_t b, int m) {
  Tensor t(Shape{static_cast<int64_t>(m) * b, 1});
  for (int m_i = 0; m_i < m; ++m_i) {
    const double tk = static_cast<double>(m_i) / static_cast<double>(m);
    for (int64_t i = 0; i < b; ++i) t[m_i * b + i] = tk;
  }
  return t;
}

inline std::vector<int> tile_labels(const std::vector<int>& y, int m) {
  std::vector<int> out;
  out.reserve(y.size() * static_cast<size_t>(m));
  for (int k = 0; k < m; ++k) out.insert(out.end(), y.begin(), y.end());
  return out;
}

}  // namespace detail

// f maps a {rows, d} node (rows = tiles * B independent samples) to per-row
// values {rows, 1}.
template <class F>
AttributionMap ig_input(Tape& tape, F&& f, Node x, Node xp, PathSpec path) {
  path.validate();
  ROBATTR_REQUIRE(x.shape() == xp.shape(),
                  "ig_input: endpoint shapes differ: ", shape_str(x.shape()),
                  " vs ", shape_str(xp.shape()));
  ROBATTR_REQUIRE(x.value().rank() == 2, "ig_input: inputs must be {B,d}");
  const int64_t b = x.value().extent(0);
  const int m = path.m;

  Node v = sub(xp, x);
  Node stacked = add(tile_rows(x, m),
                     mul(x.tape->constant(detail::path_offsets(b, m)),
                         tile_rows(v, m)));
  Node anchored = grad_anchor(stacked);
  Node per_row = f(anchored, m);
  ROBATTR_REQUIRE(per_row.value().rank() == 2 && per_row.value().extent(1) == 1 &&
                      per_row.value().extent(0) == m * b,
                  "ig_input: f must return one value per row");
  Node grads = tape.gradient(sum_all(per_row), {anchored})[0];
  Node scores = mul(mul(v, sum_tiles(grads, m)),
                    tape.scalar(1.0 / static_cast<double>(m)));
  return AttributionMap{"input", scores, f(x, 1), f(xp, 1)};
}

// Loss of a network as a row-wise function, for use with ig_input and the
// attacks. Conv networks get rows reshaped back to image form.
inline auto loss_row_fn(const Network& net, const Network::Bound& bound,
                        const std::vector<int>& labels, LossKind kind) {
  return [&net, &bound, labels, kind](Node rows, int64_t tiles) -> Node {
    Tape& tape = *rows.tape;
    Node in = rows;
    if (net.input_shape().size() == 3) {
      Shape s = net.input_shape();
      in = reshape(rows, {rows.value().extent(0), s[0], s[1], s[2]});
    }
    const std::vector<int> y =
        tiles == 1 ? labels : detail::tile_labels(labels, static_cast<int>(tiles));
    Node logits = net.forward(tape, in, bound);
    return loss_vector(tape, logits, y, kind);
  };
}

inline AttributionMap ig_input_loss(Tape& tape, const Network& net,
                                    const Network::Bound& bound,
                                    const std::vector<int>& labels,
                                    LossKind kind, Node x, Node xp,
                                    PathSpec path) {
  return ig_input(tape, loss_row_fn(net, bound, labels, kind), x, xp, path);
}

// Attribution for the neurons of a named layer: per path point, the product
// of df/dh (gradient of the loss w.r.t. the layer) and the directional
// derivative of the layer along x'-x (a jvp obtained by differentiating a
// dummy-weighted gradient). layer may be "input", any layer name, or "loss".
inline AttributionMap ig_layer(Tape& tape, const Network& net,
                               const Network::Bound& bound,
                               const std::vector<int>& labels, LossKind kind,
                               std::string_view layer, Node x, Node xp,
                               PathSpec path) {
  path.validate();
  ROBATTR_REQUIRE(x.shape() == xp.shape(),
                  "ig_layer: endpoint shapes differ: ", shape_str(x.shape()),
                  " vs ", shape_str(xp.shape()));
  const int64_t b = x.value().extent(0);
  const int m = path.m;
  const bool loss_layer = layer == "loss";
  if (!loss_layer) {
    bool known = layer == "input";
    for (const Layer& l : net.layers()) known = known || l.name == layer;
    ROBATTR_REQUIRE(known, "ig_layer: unknown layer \"", layer, "\"");
  }

  Node v = sub(xp, x);
  Node stacked = add(tile_rows(x, m),
                     mul(tape.constant(detail::path_offsets(b, m)),
                         tile_rows(v, m)));
  Node anchored = grad_anchor(stacked);
  Node in = anchored;
  if (net.input_shape().size() == 3) {
    Shape s = net.input_shape();
    in = reshape(anchored, {m * b, s[0], s[1], s[2]});
  }
  const std::vector<int> ytiled = detail::tile_labels(labels, m);

  Network::Trace trace;
  Node logits_full = net.forward(tape, in, bound, &trace);
  Node h = loss_layer ? loss_vector(tape, logits_full, ytiled, kind)
                      : trace.find(layer);
  Node ha = grad_anchor(h);
  Node out_rows;
  if (loss_layer) {
    out_rows = ha;
  } else if (layer == "input") {
    Node logits = net.forward(tape, ha, bound);
    out_rows = loss_vector(tape, logits, ytiled, kind);
  } else {
    Node logits = net.forward_from(tape, layer, ha, bound);
    out_rows = loss_vector(tape, logits, ytiled, kind);
  }

  Node df_dh = tape.gradient(sum_all(out_rows), {ha})[0];

  // jvp of the layer along v via a dummy-weighted double gradient
  Node dummy = tape.leaf(Tensor::zeros(h.shape()));
  Node weighted = sum_all(mul(ha, dummy));
  Node jt_u = tape.gradient(weighted, {anchored})[0];
  Node dir = sum_all(mul(jt_u, tile_rows(v, m)));
  Node jv = tape.gradient(dir, {dummy})[0];

  Node contrib = mul(df_dh, jv);
  const int64_t feat = contrib.value().numel() / (m * b);
  Node scores = mul(sum_tiles(reshape(contrib, {m * b, feat}), m),
                    tape.scalar(1.0 / static_cast<double>(m)));

  auto f = loss_row_fn(net, bound, labels, kind);
  return AttributionMap{std::string(layer), scores, f(x, 1), f(xp, 1)};
}

inline std::vector<double> completeness_residuals(const AttributionMap& map) {
  const Tensor& s = map.scores.value();
  const Tensor& base = map.baseline_value.value();
  const Tensor& tgt = map.target_value.value();
  const int64_t bsz = s.rows2d();
  const int64_t feat = s.cols2d();
  std::vector<double> out;
  out.reserve(static_cast<size_t>(bsz));
  for (int64_t i = 0; i < bsz; ++i) {
    double sum = 0.0;
    const double* p = s.data() + i * feat;
    for (int64_t j = 0; j < feat; ++j) sum += p[j];
    out.push_back(std::fabs(sum - (tgt[i] - base[i])));
  }
  return out;
}

inline double completeness_residual(const AttributionMap& map) {
  auto r = completeness_residuals(map);
  ROBATTR_REQUIRE(r.size() == 1, "completeness_residual: map holds ", r.size(),
                  " samples; use completeness_residuals");
  return r[0];
}

// per-sample size of an attribution map, {B,1}
inline Node size_of(Tape& tape, SizeFunction s, Node scores) {
  s.validate();
  switch (s.tag) {
    case SizeFunction::Tag::sum:
      return row_sum(scores);
    case SizeFunction::Tag::one_norm:
      return row_sum(abs(scores));
    case SizeFunction::Tag::one_norm_pow:
      return pow_const(row_sum(abs(scores)), s.q);
  }
  throw error("size: unreachable");
}

inline AttributionMap simple_gradient(Tape& tape, const Network& net,
                                      const Network::Bound& bound,
                                      const std::vector<int>& labels,
                                      LossKind kind, Node x) {
  Node anchored = grad_anchor(x);
  auto f = loss_row_fn(net, bound, labels, kind);
  Node per_row = f(anchored, 1);
  Node scores = tape.gradient(sum_all(per_row), {anchored})[0];
  return AttributionMap{"input", scores, per_row, per_row};
}

// ---- saliency export: binary PGM (P5) + sidecar with the scale ----

struct SaliencyBounds {
  double lo = 0.0, hi = 0.0;
};

inline SaliencyBounds write_saliency_pgm(const std::string& path,
                                         const Tensor& values, int64_t height,
                                         int64_t width) {
  ROBATTR_REQUIRE(values.numel() == height * width, "pgm: ", values.numel(),
                  " values for ", height, "x", width);
  SaliencyBounds b{values[0], values[0]};
  for (int64_t i = 1; i < values.numel(); ++i) {
    b.lo = std::min(b.lo, values[i]);
    b.hi = std::max(b.hi, values[i]);
  }
  std::ofstream os(path, std::ios::binary);
  ROBATTR_REQUIRE(os.good(), "pgm: cannot open ", path);
  os << "P5\n" << width << " " << height << "\n255\n";
  const double span = b.hi - b.lo;
  for (int64_t i = 0; i < values.numel(); ++i) {
    const double t = span > 0 ? (values[i] - b.lo) / span : 0.0;
    os.put(static_cast<char>(static_cast<unsigned char>(t * 255.0 + 0.5)));
  }
  char side[160];
  std::snprintf(side, sizeof(side), "{\"min\": %.17g, \"max\": %.17g}\n", b.lo,
                b.hi);
  std::ofstream sid(path + ".json");
  sid << side;
  return b;
}

inline std::vector<unsigned char> read_pgm(const std::string& path,
                                           int64_t& height, int64_t& width) {
  std::ifstream is(path, std::ios::binary);
  if (!is.good()) throw io_error("pgm: cannot open " + path);
  std::string magic;
  int64_t maxval = 0;
  is >> magic >> width >> height >> maxval;
  if (magic != "P5" || maxval != 255) throw io_error("pgm: bad header in " + path);
  is.get();
  std::vector<unsigned char> data(static_cast<size_t>(height * width));
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size()));
  if (!is.good()) throw io_error("pgm: truncated payload in " + path);
  return data;
}

}  // namespace robattr
