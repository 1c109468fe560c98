#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "hydronet/autodiff.hpp"

namespace hydronet::ad {

/// A scalar-valued function of tensors, re-recorded on a fresh tape per call.
template <typename Scalar>
using TensorFunction = std::function<Var<Scalar>(Tape<Scalar>&, const std::vector<Var<Scalar>>&)>;

/// Compares the reverse-mode gradient of `f` with central differences at step
/// `eps`, element by element over every input. Returns
/// max |a - b| / max(|a|, |b|, 1e-8).
template <typename Scalar>
Scalar finite_diff_check(const TensorFunction<Scalar>& f, const std::vector<Matrix<Scalar>>& inputs, Scalar eps) {
  const auto evaluate = [&](const std::vector<Matrix<Scalar>>& values) {
    Tape<Scalar> tape;
    std::vector<Var<Scalar>> vars;
    for (const auto& v : values) vars.push_back(tape.constant(v));
    return f(tape, vars).value()(0, 0);
  };

  std::vector<Matrix<Scalar>> analytic;
  {
    Tape<Scalar> tape;
    std::vector<Var<Scalar>> vars;
    for (const auto& v : inputs) vars.push_back(tape.variable(v));
    tape.backward(f(tape, vars));
    for (std::size_t i = 0; i < vars.size(); ++i) {
      const auto& g = vars[i].grad();
      analytic.push_back(g.size() == 0 ? Matrix<Scalar>::Zero(inputs[i].rows(), inputs[i].cols()) : g);
    }
  }

  Scalar worst = 0;
  auto probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (Index k = 0; k < inputs[i].size(); ++k) {
      const Scalar x0 = inputs[i].data()[k];
      // Divide by the step actually taken: x0 +- eps is rarely representable.
      const Scalar hi = x0 + eps;
      const Scalar lo = x0 - eps;
      probe[i].data()[k] = hi;
      const Scalar up = evaluate(probe);
      probe[i].data()[k] = lo;
      const Scalar down = evaluate(probe);
      probe[i].data()[k] = x0;
      const Scalar numeric = (up - down) / (hi - lo);
      const Scalar a = analytic[i].data()[k];
      const Scalar denom = std::max({std::abs(a), std::abs(numeric), Scalar(1e-8)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace hydronet::ad
