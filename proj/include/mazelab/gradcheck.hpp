#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mazelab/autodiff.hpp"
#include "mazelab/gpt.hpp"

namespace mazelab {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0, worst_numeric = 0.0;
  std::size_t checked = 0;
};

inline double grad_rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Masked next-token loss of a sequence (inputs seq[:-1], targets seq[1:]).
template <class T>
T sequence_loss(const GptModel<T>& model, std::span<const TokenId> seq, const std::vector<std::uint8_t>& mask) {
  Tape<T> tape;
  const auto vars = bind(tape, model, false);
  const auto logits = gpt_forward(tape, model.config, vars, seq.first(seq.size() - 1));
  return tape.value(tape.cross_entropy_masked(logits, seq.subspan(1), mask))[0];
}

// Analytic gradients from the tape against central finite differences for
// every parameter entry (stride > 1 checks every stride-th entry).
template <class T>
GradCheckResult grad_check(const GptModel<T>& model, std::span<const TokenId> seq, const std::vector<std::uint8_t>& mask,
                           T h = T(1e-5), std::size_t stride = 1, typename Tape<T>::GradHook hook = {}) {
  std::vector<Tensor<T>> analytic;
  {
    Tape<T> tape;
    if (hook) tape.set_grad_hook(hook);
    const auto vars = bind(tape, model, true);
    const auto logits = gpt_forward(tape, model.config, vars, seq.first(seq.size() - 1));
    const auto loss = tape.cross_entropy_masked(logits, seq.subspan(1), mask);
    tape.backward(loss);
    vars.visit([&](const std::string&, const typename Tape<T>::Var& v) {
      const Tensor<T>* g = tape.grad(v);
      analytic.push_back(g ? *g : Tensor<T>(tape.value(v).shape()));
    });
  }
  GptModel<T> probe = model;
  const auto names = probe.names();
  const auto params = probe.tensors();
  GradCheckResult res;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<T>& w = *params[p];
    for (std::size_t i = 0; i < w.numel(); i += stride) {
      const T orig = w[i];
      w[i] = orig + h;
      const T up = sequence_loss(probe, seq, mask);
      w[i] = orig - h;
      const T down = sequence_loss(probe, seq, mask);
      w[i] = orig;
      const double numeric = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * static_cast<double>(h));
      const double a = static_cast<double>(analytic[p][i]);
      const double err = grad_rel_error(a, numeric);
      ++res.checked;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_tensor = names[p];
        res.worst_index = i;
        res.worst_analytic = a;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace mazelab
