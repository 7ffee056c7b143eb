#pragma once

// Robust-attribution training objectives over an l-inf neighborhood:
// the per-sample inner value rho(x,y;theta) for each named variant, the
// attack-phase inner term the adversary maximizes, and the gradient of the
// averaged objective w.r.t. the parameters with x* held fixed.

#include <optional>
#include <string>
#include <vector>

#include "robattr/attribution.hpp"
#include "robattr/nn.hpp"

namespace robattr {

struct Neighborhood {
  double epsilon = 0.3;
  double box_lo = 0.0;
  double box_hi = 1.0;
  bool box = true;
};

enum class ObjectiveVariant {
  ig_norm,        // l(x) + lambda * s(IG(x,x'))
  ig_sum_norm,    // l(x') + beta * s(IG(x,x'))
  madry,          // l(x')
  input_grad_reg, // l(x) + (lambda'/eps^q) * ||(x'-x) .* grad l(x)||_1^q
  loss_output,    // l(x) + |l(x') - l(x)|
};

inline const char* variant_name(ObjectiveVariant v) {
  switch (v) {
    case ObjectiveVariant::ig_norm: return "ig_norm";
    case ObjectiveVariant::ig_sum_norm: return "ig_sum_norm";
    case ObjectiveVariant::madry: return "madry";
    case ObjectiveVariant::input_grad_reg: return "input_grad_reg";
    case ObjectiveVariant::loss_output: return "loss_output";
  }
  return "?";
}

struct ObjectiveSpec {
  ObjectiveVariant variant = ObjectiveVariant::ig_norm;
  double lambda = 1.0;        // ig_norm
  double beta = 0.1;          // ig_sum_norm
  double lambda_prime = 1.0;  // input_grad_reg
  double q = 2.0;             // input_grad_reg exponent
  SizeFunction size = SizeFunction::one_norm();
  std::string layer = "input";
  PathSpec path{PathSpec::Kind::straightline, 16};
  Neighborhood nbhd;
  LossKind loss = LossKind::cross_entropy_nll;

  void validate() const {
    path.validate();
    size.validate();
    ROBATTR_REQUIRE(lambda >= 0.0, "objective: lambda must be >= 0");
    ROBATTR_REQUIRE(beta >= 0.0, "objective: beta must be >= 0");
    ROBATTR_REQUIRE(nbhd.epsilon >= 0.0, "objective: epsilon must be >= 0");
    if (variant == ObjectiveVariant::madry) {
      ROBATTR_REQUIRE(size.tag == SizeFunction::Tag::sum && lambda == 1.0,
                      "objective: madry requires size=sum and lambda=1");
    }
    if (variant == ObjectiveVariant::input_grad_reg) {
      ROBATTR_REQUIRE(path.m == 1, "objective: input_grad_reg requires m=1");
      ROBATTR_REQUIRE(q >= 1.0, "objective: input_grad_reg requires q >= 1");
      ROBATTR_REQUIRE(lambda_prime >= 0.0, "objective: lambda' must be >= 0");
      ROBATTR_REQUIRE(nbhd.epsilon > 0.0,
                      "objective: input_grad_reg requires epsilon > 0");
    }
  }
};

struct Batch {
  Tensor x;            // {B, d}
  std::vector<int> y;
};

namespace detail {

inline Node per_sample_loss_at(Tape& tape, const Network& net,
                               const Network::Bound& bound,
                               const std::vector<int>& y, LossKind kind,
                               Node at) {
  return loss_row_fn(net, bound, y, kind)(at, 1);
}

inline AttributionMap objective_ig(Tape& tape, const ObjectiveSpec& spec,
                                   const Network& net,
                                   const Network::Bound& bound,
                                   const std::vector<int>& y, Node x, Node xp,
                                   int m) {
  PathSpec path{PathSpec::Kind::straightline, m};
  if (spec.layer == "input")
    return ig_input_loss(tape, net, bound, y, spec.loss, x, xp, path);
  return ig_layer(tape, net, bound, y, spec.loss, spec.layer, x, xp, path);
}

// the gradient-times-offset regularizer of input_grad_reg, {B,1}
inline Node input_grad_penalty(Tape& tape, const ObjectiveSpec& spec,
                               const Network& net, const Network::Bound& bound,
                               const std::vector<int>& y, Node x, Node xp) {
  AttributionMap sg = simple_gradient(tape, net, bound, y, spec.loss, x);
  Node prod = mul(sub(xp, x), sg.scores);
  return pow_const(row_sum(abs(prod)), spec.q);
}

}  // namespace detail

// The two pieces of the per-sample objective, kept separate so training can
// log them as independent series. total = loss_term + weight * reg_term.
struct ObjectiveParts {
  Node total;      // {B,1}
  Node loss_term;  // {B,1}
  Node reg_term;   // {B,1} unweighted regularizer (zeros when absent)
  double weight = 0.0;
  std::optional<AttributionMap> ig;  // present for the IG variants
};

inline ObjectiveParts inner_value_parts(Tape& tape, const ObjectiveSpec& spec,
                                        const Network& net,
                                        const Network::Bound& bound, Node x,
                                        Node xp, const std::vector<int>& y) {
  spec.validate();
  ObjectiveParts parts;
  switch (spec.variant) {
    case ObjectiveVariant::ig_norm: {
      parts.loss_term = detail::per_sample_loss_at(tape, net, bound, y,
                                                   spec.loss, x);
      if (spec.lambda == 0.0) {
        parts.reg_term = tape.constant(Tensor::zeros(parts.loss_term.shape()));
        parts.total = parts.loss_term;
        parts.weight = 0.0;
        return parts;
      }
      AttributionMap ig =
          detail::objective_ig(tape, spec, net, bound, y, x, xp, spec.path.m);
      parts.reg_term = size_of(tape, spec.size, ig.scores);
      parts.weight = spec.lambda;
      parts.total = add(parts.loss_term, mul(parts.reg_term, tape.scalar(spec.lambda)));
      parts.ig = std::move(ig);
      return parts;
    }
    case ObjectiveVariant::ig_sum_norm: {
      parts.loss_term = detail::per_sample_loss_at(tape, net, bound, y,
                                                   spec.loss, xp);
      if (spec.beta == 0.0) {
        parts.reg_term = tape.constant(Tensor::zeros(parts.loss_term.shape()));
        parts.total = parts.loss_term;
        parts.weight = 0.0;
        return parts;
      }
      AttributionMap ig =
          detail::objective_ig(tape, spec, net, bound, y, x, xp, spec.path.m);
      parts.reg_term = size_of(tape, spec.size, ig.scores);
      parts.weight = spec.beta;
      parts.total = add(parts.loss_term, mul(parts.reg_term, tape.scalar(spec.beta)));
      parts.ig = std::move(ig);
      return parts;
    }
    case ObjectiveVariant::madry: {
      parts.loss_term = detail::per_sample_loss_at(tape, net, bound, y,
                                                   spec.loss, xp);
      parts.reg_term = tape.constant(Tensor::zeros(parts.loss_term.shape()));
      parts.total = parts.loss_term;
      return parts;
    }
    case ObjectiveVariant::input_grad_reg: {
      parts.loss_term = detail::per_sample_loss_at(tape, net, bound, y,
                                                   spec.loss, x);
      parts.reg_term =
          detail::input_grad_penalty(tape, spec, net, bound, y, x, xp);
      parts.weight =
          spec.lambda_prime / std::pow(spec.nbhd.epsilon, spec.q);
      parts.total = add(parts.loss_term, mul(parts.reg_term, tape.scalar(parts.weight)));
      return parts;
    }
    case ObjectiveVariant::loss_output: {
      parts.loss_term = detail::per_sample_loss_at(tape, net, bound, y,
                                                   spec.loss, x);
      Node at_xp = detail::per_sample_loss_at(tape, net, bound, y, spec.loss, xp);
      parts.reg_term = abs(sub(at_xp, parts.loss_term));
      parts.weight = 1.0;
      // l + |l' - l| == max(l', 2l - l'); the max form avoids the
      // cancellation that could round the surrogate below l'
      parts.total = maximum(at_xp,
                            sub(mul(parts.loss_term, tape.scalar(2.0)), at_xp));
      return parts;
    }
  }
  throw error("inner_value: unreachable");
}

inline Node inner_value(Tape& tape, const ObjectiveSpec& spec,
                        const Network& net, const Network::Bound& bound,
                        Node x, Node xp, const std::vector<int>& y) {
  return inner_value_parts(tape, spec, net, bound, x, xp, y).total;
}

// The quantity the attack-phase adversary maximizes over x' (the inner max
// term of the objective), evaluated with m_attack IG segments.
inline Node attack_term(Tape& tape, const ObjectiveSpec& spec,
                        const Network& net, const Network::Bound& bound,
                        Node x, Node xp, const std::vector<int>& y,
                        int m_attack) {
  spec.validate();
  switch (spec.variant) {
    case ObjectiveVariant::ig_norm: {
      AttributionMap ig =
          detail::objective_ig(tape, spec, net, bound, y, x, xp, m_attack);
      return size_of(tape, spec.size, ig.scores);
    }
    case ObjectiveVariant::ig_sum_norm: {
      Node at_xp = detail::per_sample_loss_at(tape, net, bound, y, spec.loss, xp);
      if (spec.beta == 0.0) return at_xp;
      AttributionMap ig =
          detail::objective_ig(tape, spec, net, bound, y, x, xp, m_attack);
      return add(at_xp, mul(size_of(tape, spec.size, ig.scores),
                            tape.scalar(spec.beta)));
    }
    case ObjectiveVariant::madry:
      return detail::per_sample_loss_at(tape, net, bound, y, spec.loss, xp);
    case ObjectiveVariant::input_grad_reg:
      return detail::input_grad_penalty(tape, spec, net, bound, y, x, xp);
    case ObjectiveVariant::loss_output: {
      Node at_x = detail::per_sample_loss_at(tape, net, bound, y, spec.loss, x);
      Node at_xp = detail::per_sample_loss_at(tape, net, bound, y, spec.loss, xp);
      return abs(sub(at_xp, at_x));
    }
  }
  throw error("attack_term: unreachable");
}

// d(mean objective)/d(theta) with x* frozen. Also reports the logged series.
struct ObjectiveGrads {
  std::vector<Tensor> grads;
  double loss_term = 0.0;     // batch mean
  double reg_term = 0.0;      // batch mean, unweighted
  double total = 0.0;
  double completeness = 0.0;  // mean IG completeness residual, 0 if no IG
};

inline ObjectiveGrads objective_grad(const ObjectiveSpec& spec, Network& net,
                                     const Batch& batch, const Tensor& x_star) {
  Tape tape;
  Network::Bound bound = net.bind(tape, /*trainable=*/true);
  Node x = tape.constant(batch.x);
  Node xp = tape.constant(x_star);
  ObjectiveParts parts =
      inner_value_parts(tape, spec, net, bound, x, xp, batch.y);
  const double inv_b = 1.0 / static_cast<double>(batch.y.size());
  Node scalar_total = mul(sum_all(parts.total), tape.scalar(inv_b));
  std::vector<Node> grads = tape.gradient(scalar_total, bound.params);
  ObjectiveGrads out;
  out.total = scalar_total.value().value();
  out.loss_term = sum_all(parts.loss_term).value().value() * inv_b;
  out.reg_term = sum_all(parts.reg_term).value().value() * inv_b;
  if (parts.ig) {
    const std::vector<double> res = completeness_residuals(*parts.ig);
    double acc = 0.0;
    for (double r : res) acc += r;
    out.completeness = acc * inv_b;
  }
  out.grads.reserve(grads.size());
  for (Node g : grads) out.grads.push_back(g.value());
  return out;
}

// ---- one-layer closed forms ----

enum class ScalarLoss { logistic, softplus_hinge };

inline double scalar_loss(ScalarLoss g, double z) {
  switch (g) {
    case ScalarLoss::logistic: return detail::softplus_scalar(z);
    case ScalarLoss::softplus_hinge: return detail::softplus_scalar(1.0 + z);
  }
  throw error("scalar_loss: unreachable");
}

inline double scalar_loss_grad(ScalarLoss g, double z) {
  switch (g) {
    case ScalarLoss::logistic: return detail::sigmoid_scalar(z);
    case ScalarLoss::softplus_hinge: return detail::sigmoid_scalar(1.0 + z);
  }
  throw error("scalar_loss_grad: unreachable");
}

struct OneLayerForms {
  double robust_loss;  // g(-y<w,x> + eps*||w||_1), the soft-margin value
  double ig_norm_max;  // max over the eps-ball of ||IG||_1
};

// For losses l(x') = g(-y<w,x'>) with g differentiable, non-decreasing and
// convex, the worst-case loss and worst-case ||IG||_1 over the unclipped
// l-inf ball have closed forms, both attained at delta_i = -y sign(w_i) eps.
inline OneLayerForms one_layer_closed_form(const Tensor& w, const Tensor& x,
                                           int y_pm, double eps, ScalarLoss g) {
  ROBATTR_REQUIRE(w.all_finite(), "one_layer_closed_form: non-finite weights");
  ROBATTR_REQUIRE(same_shape(w, x), "one_layer_closed_form: w/x shapes differ");
  ROBATTR_REQUIRE(y_pm == 1 || y_pm == -1,
                  "one_layer_closed_form: label must be +-1");
  ROBATTR_REQUIRE(eps >= 0.0, "one_layer_closed_form: eps must be >= 0");
  double dot = 0.0, onenorm = 0.0;
  for (int64_t i = 0; i < w.numel(); ++i) {
    dot += w[i] * x[i];
    onenorm += std::fabs(w[i]);
  }
  const double z = -static_cast<double>(y_pm) * dot;
  const double lift = eps * onenorm;
  return OneLayerForms{scalar_loss(g, z + lift),
                       scalar_loss(g, z + lift) - scalar_loss(g, z)};
}

}  // namespace robattr
