#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mazelab/tensor.hpp"

namespace mazelab {

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class NonFinitePolicy { skip_step, fail };

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  NonFinitePolicy on_non_finite = NonFinitePolicy::fail;
};

template <class T>
struct AdamWState {
  AdamWConfig config;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::int64_t step = 0;

  AdamWState() = default;
  AdamWState(AdamWConfig cfg, std::span<const Tensor<T>* const> params) : config(cfg) {
    for (const auto* p : params) {
      m.emplace_back(p->shape());
      v.emplace_back(p->shape());
    }
  }
};

enum class StepOutcome { applied, skipped_non_finite };

// Decoupled weight decay (Loshchilov & Hutter), bias-corrected moments.
// Arithmetic is done in double and rounded back to T.
template <class T, class G>
StepOutcome adamw_step(std::span<Tensor<T>* const> params, std::span<const Tensor<G>> grads, AdamWState<T>& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw std::invalid_argument("adamw_step: " + std::to_string(params.size()) + " params, " +
                                std::to_string(grads.size()) + " grads, " + std::to_string(state.m.size()) +
                                " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) throw ShapeError("adamw_step", params[i]->shape(), grads[i].shape());
    if (state.m[i].shape() != params[i]->shape()) throw ShapeError("adamw_step moments", state.m[i].shape(), params[i]->shape());
    for (std::size_t j = 0; j < grads[i].numel(); ++j) {
      if (!std::isfinite(static_cast<double>(grads[i][j]))) {
        if (state.config.on_non_finite == NonFinitePolicy::skip_step) return StepOutcome::skipped_non_finite;
        throw NonFiniteError("non-finite gradient in parameter " + std::to_string(i) + " at index " + std::to_string(j));
      }
    }
  }
  const auto& c = state.config;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i];
    Tensor<T>& m = state.m[i];
    Tensor<T>& v = state.v[i];
    const Tensor<G>& g = grads[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      const double gj = static_cast<double>(g[j]);
      double pj = static_cast<double>(p[j]);
      pj -= c.lr * c.weight_decay * pj;
      const double mj = c.beta1 * static_cast<double>(m[j]) + (1.0 - c.beta1) * gj;
      const double vj = c.beta2 * static_cast<double>(v[j]) + (1.0 - c.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      pj -= c.lr * (mj / bc1) / (std::sqrt(vj / bc2) + c.eps);
      p[j] = static_cast<T>(pj);
    }
  }
  return StepOutcome::applied;
}

}  // namespace mazelab
