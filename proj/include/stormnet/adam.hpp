#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "stormnet/error.hpp"
#include "stormnet/tensor.hpp"

namespace stormnet {

struct AdamOptions {
  double learning_rate = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// L2 coefficient folded into the gradient before the moment updates.
  double weight_decay = 5e-7;
};

struct AdamState {
  AdamOptions options;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  AdamState() = default;
  AdamState(AdamOptions opts, const std::vector<Tensor>& params) : options(opts) {
    for (const Tensor& p : params) {
      first_moment.emplace_back(p.shape());
      second_moment.emplace_back(p.shape());
    }
  }
};

/// One bias-corrected Adam update, in place. Increments state.step.
inline void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                      AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size()) {
    throw ShapeMismatch("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].shape() != grads[k].shape() ||
        params[k].shape() != state.first_moment[k].shape() ||
        params[k].shape() != state.second_moment[k].shape()) {
      throw ShapeMismatch("adam_step: shape mismatch for parameter " + std::to_string(k) +
                          " " + shape_str(params[k].shape()));
    }
  }

  const AdamOptions& o = state.options;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].data();
    auto g = grads[k].data();
    auto m = state.first_moment[k].data();
    auto v = state.second_moment[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] + o.weight_decay * p[i];
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * gi;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * gi * gi;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
  }
}

}  // namespace stormnet
