#pragma once

// Small feed-forward networks with named intermediate activations, built on
// the autodiff tape. Dense and minimal conv (stride 1, valid padding, 2x2
// maxpool) layers; relu or softplus activations.

#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "robattr/autodiff.hpp"
#include "robattr/rng.hpp"

namespace robattr {

enum class Activation { relu, softplus };

enum class LossKind { cross_entropy_nll, softplus_hinge };

struct Layer {
  enum class Kind { dense, conv2d, relu, softplus, maxpool2, flatten };
  Kind kind;
  int64_t in = 0, out = 0, kernel = 0;
  std::string name;
};

class Network {
 public:
  struct Bound {
    std::vector<Node> params;
  };
  // named intermediate activations, in forward order; starts with "input"
  struct Trace {
    std::vector<std::pair<std::string, Node>> named;
    Node find(std::string_view layer) const {
      for (const auto& [n, node] : named)
        if (n == layer) return node;
      throw error(detail::msg_cat("unknown layer \"", layer, "\""));
    }
    bool has(std::string_view layer) const {
      for (const auto& [n, node] : named)
        if (n == layer) return true;
      return false;
    }
  };

  Network() = default;

  // dims = {in, hidden..., out}
  static Network mlp(const std::vector<int64_t>& dims, Activation act,
                     uint64_t seed) {
    ROBATTR_REQUIRE(dims.size() >= 2, "mlp: needs at least input and output dims");
    Network net;
    net.input_shape_ = {dims[0]};
    Rng rng(seed);
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
      const int fc_index = static_cast<int>(i) + 1;
      Layer d{Layer::Kind::dense, dims[i], dims[i + 1], 0,
              "fc" + std::to_string(fc_index)};
      net.layers_.push_back(d);
      net.add_dense_params(d.name, dims[i], dims[i + 1], rng);
      if (i + 2 < dims.size()) {
        Layer a{act == Activation::relu ? Layer::Kind::relu
                                        : Layer::Kind::softplus,
                0, 0, 0, "act" + std::to_string(fc_index)};
        net.layers_.push_back(a);
      }
    }
    net.num_classes_ = dims.back() == 1 ? 2 : static_cast<int>(dims.back());
    return net;
  }

  // conv stack: each entry (filters, kernel) followed by activation and 2x2
  // pool, then flatten and a dense readout.
  static Network convnet(Shape input_chw,
                         const std::vector<std::pair<int64_t, int64_t>>& convs,
                         int64_t classes, Activation act, uint64_t seed) {
    ROBATTR_REQUIRE(input_chw.size() == 3, "convnet: input shape must be {C,H,W}");
    Network net;
    net.input_shape_ = input_chw;
    Rng rng(seed);
    int64_t c = input_chw[0], h = input_chw[1], w = input_chw[2];
    int idx = 1;
    for (auto [filters, kernel] : convs) {
      Layer conv{Layer::Kind::conv2d, c, filters, kernel,
                 "conv" + std::to_string(idx)};
      net.layers_.push_back(conv);
      net.add_conv_params(conv.name, c, filters, kernel, rng);
      h -= kernel - 1;
      w -= kernel - 1;
      net.layers_.push_back({act == Activation::relu ? Layer::Kind::relu
                                                     : Layer::Kind::softplus,
                             0, 0, 0, "act" + std::to_string(idx)});
      ROBATTR_REQUIRE(h % 2 == 0 && w % 2 == 0,
                      "convnet: pooled extents must stay even");
      net.layers_.push_back({Layer::Kind::maxpool2, 0, 0, 0,
                             "pool" + std::to_string(idx)});
      h /= 2;
      w /= 2;
      c = filters;
      ++idx;
    }
    net.layers_.push_back({Layer::Kind::flatten, 0, 0, 0, "flatten"});
    const int64_t flat = c * h * w;
    Layer readout{Layer::Kind::dense, flat, classes, 0, "fc1"};
    net.layers_.push_back(readout);
    net.add_dense_params(readout.name, flat, classes, rng);
    net.num_classes_ = classes == 1 ? 2 : static_cast<int>(classes);
    return net;
  }

  // same topology with softplus in place of relu; parameters are shared
  // values (copied), useful for finite-difference suites
  Network smooth_variant() const {
    Network net = *this;
    for (Layer& l : net.layers_)
      if (l.kind == Layer::Kind::relu) l.kind = Layer::Kind::softplus;
    return net;
  }

  const Shape& input_shape() const { return input_shape_; }
  int64_t input_dim() const { return shape_numel(input_shape_); }
  int num_classes() const { return num_classes_; }
  const std::vector<Layer>& layers() const { return layers_; }

  size_t param_count() const { return params_.size(); }
  const std::string& param_name(size_t i) const { return param_names_[i]; }
  const Tensor& param(size_t i) const { return params_[i]; }
  std::vector<Tensor>& mutable_params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  void set_param(size_t i, Tensor t) {
    ROBATTR_REQUIRE(t.shape() == params_[i].shape(),
                    "set_param: shape mismatch for ", param_names_[i]);
    params_[i] = std::move(t);
  }
  int64_t param_numel() const {
    int64_t n = 0;
    for (const Tensor& p : params_) n += p.numel();
    return n;
  }

  Bound bind(Tape& tape, bool trainable) const {
    Bound b;
    b.params.reserve(params_.size());
    for (const Tensor& p : params_)
      b.params.push_back(trainable ? tape.leaf(p) : tape.constant(p));
    return b;
  }

  // x: {B, input_dim} for dense nets, {B,C,H,W} for conv nets
  Node forward(Tape& tape, Node x, const Bound& bound,
               Trace* trace = nullptr) const {
    check_input(x.value());
    if (trace) trace->named.emplace_back("input", x);
    Node cur = x;
    size_t pi = 0;
    for (const Layer& l : layers_) {
      cur = apply_layer(l, cur, bound, pi);
      if (trace) trace->named.emplace_back(l.name, cur);
    }
    return cur;
  }

  // Resume the forward pass after the named layer, starting from h (which
  // must have that layer's output shape). "input" resumes from the start.
  Node forward_from(Tape& tape, std::string_view after_layer, Node h,
                    const Bound& bound) const {
    size_t li = 0, pi = 0;
    if (after_layer != "input") {
      bool found = false;
      for (; li < layers_.size(); ++li) {
        const Layer& l = layers_[li];
        if (l.kind == Layer::Kind::dense) pi += 2;
        else if (l.kind == Layer::Kind::conv2d) pi += 1;
        if (l.name == after_layer) {
          found = true;
          ++li;
          break;
        }
      }
      ROBATTR_REQUIRE(found, "forward_from: unknown layer \"", after_layer, "\"");
    }
    Node cur = h;
    for (; li < layers_.size(); ++li) cur = apply_layer(layers_[li], cur, bound, pi);
    return cur;
  }

  std::vector<std::string> layer_names() const {
    std::vector<std::string> out{"input"};
    for (const Layer& l : layers_) out.push_back(l.name);
    return out;
  }

 private:
  Node apply_layer(const Layer& l, Node cur, const Bound& bound,
                   size_t& pi) const {
    switch (l.kind) {
      case Layer::Kind::dense: {
        Node w = bound.params[pi++];
        Node b = bound.params[pi++];
        return add(matmul(cur, w), b);
      }
      case Layer::Kind::conv2d:
        return conv2d(cur, bound.params[pi++]);
      case Layer::Kind::relu:
        return relu(cur);
      case Layer::Kind::softplus:
        return softplus(cur);
      case Layer::Kind::maxpool2:
        return maxpool2(cur);
      case Layer::Kind::flatten: {
        const Tensor& v = cur.value();
        return reshape(cur, {v.extent(0), v.numel() / v.extent(0)});
      }
    }
    throw error("apply_layer: unreachable");
  }

  void check_input(const Tensor& x) const {
    if (input_shape_.size() == 1) {
      ROBATTR_REQUIRE(x.rank() == 2 && x.extent(1) == input_shape_[0],
                      "forward: expected {B,", input_shape_[0], "}, got ",
                      shape_str(x.shape()));
    } else {
      ROBATTR_REQUIRE(x.rank() == 4 && x.extent(1) == input_shape_[0] &&
                          x.extent(2) == input_shape_[1] &&
                          x.extent(3) == input_shape_[2],
                      "forward: expected {B,", shape_str(input_shape_),
                      "}, got ", shape_str(x.shape()));
    }
  }

  void add_dense_params(const std::string& name, int64_t in, int64_t out,
                        Rng& rng) {
    // Kaiming-uniform fan-in bound; biases zero
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    Tensor w(Shape{in, out});
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
    register_param(name + ".w", std::move(w));
    register_param(name + ".b", Tensor::zeros({out}));
  }

  void add_conv_params(const std::string& name, int64_t in_ch, int64_t filters,
                       int64_t kernel, Rng& rng) {
    const double fan_in = static_cast<double>(in_ch * kernel * kernel);
    const double bound = std::sqrt(6.0 / fan_in);
    Tensor w(Shape{filters, in_ch, kernel, kernel});
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
    register_param(name + ".w", std::move(w));
  }

  void register_param(std::string name, Tensor t) {
    for (const std::string& existing : param_names_)
      ROBATTR_REQUIRE(existing != name, "duplicate parameter name ", name);
    param_names_.push_back(std::move(name));
    params_.push_back(std::move(t));
  }

  std::vector<Layer> layers_;
  std::vector<std::string> param_names_;
  std::vector<Tensor> params_;
  Shape input_shape_;
  int num_classes_ = 0;
};

// ---- losses ----

inline Tensor onehot_rows(const std::vector<int>& labels, int64_t classes) {
  Tensor t(Shape{static_cast<int64_t>(labels.size()), classes});
  for (size_t i = 0; i < labels.size(); ++i) {
    ROBATTR_REQUIRE(labels[i] >= 0 && labels[i] < classes, "label ", labels[i],
                    " out of range [0,", classes, ")");
    t[static_cast<int64_t>(i) * classes + labels[i]] = 1.0;
  }
  return t;
}

// per-sample losses, {B,1}; rows of `logits` are independent samples
inline Node loss_vector(Tape& tape, Node logits, const std::vector<int>& labels,
                        LossKind kind) {
  const Tensor& z = logits.value();
  ROBATTR_REQUIRE(z.rank() == 2, "loss: logits must be {B,K}, got ",
                  shape_str(z.shape()));
  ROBATTR_REQUIRE(z.extent(0) == static_cast<int64_t>(labels.size()),
                  "loss: ", labels.size(), " labels for ", z.extent(0), " rows");
  if (kind == LossKind::cross_entropy_nll) {
    // logsumexp(z) - z_y, shifted by the row max for stability
    Node m = row_max(logits);
    Node lse = add(m, log(row_sum(exp(sub(logits, m)))));
    Node picked = row_sum(mul(logits, tape.constant(onehot_rows(labels, z.extent(1)))));
    return sub(lse, picked);
  }
  // softplus hinge: binary labels {0,1} -> y in {-1,+1}, single logit
  ROBATTR_REQUIRE(z.extent(1) == 1, "softplus_hinge: needs a single logit");
  Tensor y(Shape{z.extent(0), 1});
  for (size_t i = 0; i < labels.size(); ++i) {
    ROBATTR_REQUIRE(labels[i] == 0 || labels[i] == 1, "softplus_hinge: label ",
                    labels[i], " not binary");
    y[static_cast<int64_t>(i)] = labels[i] == 1 ? 1.0 : -1.0;
  }
  Node margin = sub(tape.scalar(1.0), mul(tape.constant(std::move(y)), logits));
  return softplus(margin);
}

inline Node loss_mean(Tape& tape, Node logits, const std::vector<int>& labels,
                      LossKind kind) {
  Node v = loss_vector(tape, logits, labels, kind);
  return sum_all(v) * (1.0 / static_cast<double>(labels.size()));
}

inline std::vector<int> predict_classes(const Tensor& logits) {
  ROBATTR_REQUIRE(logits.rank() == 2, "predict: logits must be {B,K}");
  std::vector<int> out;
  const int64_t B = logits.extent(0), K = logits.extent(1);
  out.reserve(static_cast<size_t>(B));
  for (int64_t i = 0; i < B; ++i) {
    const double* p = logits.data() + i * K;
    if (K == 1) {
      out.push_back(p[0] > 0 ? 1 : 0);
      continue;
    }
    int64_t arg = 0;
    for (int64_t j = 1; j < K; ++j)
      if (p[j] > p[arg]) arg = j;
    out.push_back(static_cast<int>(arg));
  }
  return out;
}

}  // namespace robattr
