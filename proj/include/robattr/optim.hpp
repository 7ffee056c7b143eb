#pragma once

#include <cmath>
#include <vector>

#include "robattr/error.hpp"
#include "robattr/tensor.hpp"

namespace robattr {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m, v;
  int64_t t = 0;

  void ensure(const std::vector<Tensor>& params) {
    if (!m.empty()) return;
    for (const Tensor& p : params) {
      m.push_back(Tensor::zeros(p.shape()));
      v.push_back(Tensor::zeros(p.shape()));
    }
  }
};

inline void adam_step(std::vector<Tensor>& params,
                      const std::vector<Tensor>& grads, AdamState& state,
                      const AdamConfig& cfg) {
  ROBATTR_REQUIRE(params.size() == grads.size(),
                  "adam: ", grads.size(), " grads for ", params.size(),
                  " params");
  state.ensure(params);
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    ROBATTR_REQUIRE(same_shape(params[i], grads[i]),
                    "adam: grad shape mismatch at param ", i);
    double* p = params[i].data();
    const double* g = grads[i].data();
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    const int64_t n = params[i].numel();
    for (int64_t k = 0; k < n; ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

struct SgdConfig {
  double lr = 1e-2;
  double momentum = 0.0;
};

struct SgdState {
  std::vector<Tensor> vel;

  void ensure(const std::vector<Tensor>& params) {
    if (!vel.empty()) return;
    for (const Tensor& p : params) vel.push_back(Tensor::zeros(p.shape()));
  }
};

inline void sgd_step(std::vector<Tensor>& params,
                     const std::vector<Tensor>& grads, SgdState& state,
                     const SgdConfig& cfg) {
  ROBATTR_REQUIRE(params.size() == grads.size(),
                  "sgd: ", grads.size(), " grads for ", params.size(),
                  " params");
  state.ensure(params);
  for (size_t i = 0; i < params.size(); ++i) {
    double* p = params[i].data();
    const double* g = grads[i].data();
    double* v = state.vel[i].data();
    const int64_t n = params[i].numel();
    for (int64_t k = 0; k < n; ++k) {
      v[k] = cfg.momentum * v[k] + g[k];
      p[k] -= cfg.lr * v[k];
    }
  }
}

}  // namespace robattr
