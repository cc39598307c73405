#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "adk/error.hpp"
#include "adk/tensor.hpp"

namespace adk::optim {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates, one pair per parameter tensor.
template <class T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t t = 0;

  static AdamState zeros_like(std::span<const Tensor<T>* const> params) {
    AdamState s;
    for (const auto* p : params) {
      s.m.emplace_back(p->shape());
      s.v.emplace_back(p->shape());
    }
    return s;
  }
};

/// One bias-corrected Adam update applied in place.
template <class T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads, AdamState<T>& state,
               double lr, const AdamHyper& hyper = {}) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || params[i]->shape() != state.m[i].shape()) {
      throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i) + ": " +
                       to_string(params[i]->shape()) + " vs gradient " + to_string(grads[i].shape()));
    }
  }
  ++state.t;
  const T b1 = static_cast<T>(hyper.beta1);
  const T b2 = static_cast<T>(hyper.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(hyper.beta1, static_cast<double>(state.t)));
  const T c2 = static_cast<T>(1.0 - std::pow(hyper.beta2, static_cast<double>(state.t)));
  const T step = static_cast<T>(lr);
  const T eps = static_cast<T>(hyper.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    Tensor<T>& m = state.m[i];
    Tensor<T>& v = state.v[i];
    const Tensor<T>& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (T{1} - b1) * g[j];
      v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
      const T mhat = m[j] / c1;
      const T vhat = v[j] / c2;
      p[j] -= step * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace adk::optim
