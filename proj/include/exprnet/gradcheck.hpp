#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "exprnet/tensor.hpp"

namespace exprnet {

/// One coordinate probed by the finite-difference harness.
struct GradProbe {
  std::size_t tensor = 0;
  std::size_t element = 0;
};

namespace detail {

inline double relative_gap(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

template <typename T>
double checked_value(const Tensor<T>& t) {
  if (t.numel() != 1) throw ShapeError("finite_diff_check: function must be scalar-valued");
  const double v = t.item();
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite function value");
  return v;
}

}  // namespace detail

/// Compares reverse-mode gradients of `loss` against central differences
/// for the probed coordinates of `inputs`, returning
///   max |analytic - numeric| / max(1, |numeric|).
/// `loss` must rebuild its graph from the current contents of `inputs` on
/// every call. An empty probe list checks every coordinate of every input.
template <typename T>
double finite_diff_check(const std::function<Tensor<T>()>& loss, std::vector<Tensor<T>> inputs, T epsilon,
                         std::vector<GradProbe> probes = {}) {
  if (!(epsilon > T{0})) throw ValueError("finite_diff_check: epsilon must be positive");
  if (probes.empty()) {
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      for (std::size_t i = 0; i < inputs[t].numel(); ++i) probes.push_back({t, i});
    }
  }

  for (auto& in : inputs) in.zero_grad();
  const Tensor<T> value = loss();
  detail::checked_value(value);
  backward(value);

  double worst = 0.0;
  for (const GradProbe& probe : probes) {
    Tensor<T>& target = inputs.at(probe.tensor);
    const double analytic = target.grad()[probe.element];
    if (!std::isfinite(analytic)) throw NumericError("finite_diff_check: non-finite analytic gradient");
    T& slot = target.mutable_data()[probe.element];
    const T original = slot;
    double plus, minus;
    {
      NoGradGuard no_grad;
      slot = original + epsilon;
      plus = detail::checked_value(loss());
      slot = original - epsilon;
      minus = detail::checked_value(loss());
    }
    slot = original;
    const double numeric = (plus - minus) / (2.0 * static_cast<double>(epsilon));
    worst = std::max(worst, detail::relative_gap(analytic, numeric));
  }
  return worst;
}

/// Single-point form: `f` maps a tensor to a scalar; `point` is not modified.
template <typename T>
double finite_diff_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& point, T epsilon) {
  Tensor<T> x = point.clone();
  x.set_requires_grad(true);
  return finite_diff_check<T>([&] { return f(x); }, {x}, epsilon);
}

}  // namespace exprnet
