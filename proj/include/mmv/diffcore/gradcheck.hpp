#pragma once

#include <functional>
#include <span>
#include <string>

#include "mmv/diffcore/tensor.hpp"

namespace mmv::diff {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_input;  // "input#<i>[<coord>]" of the worst coordinate
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences (f(x+eps) - f(x-eps)) / (2 eps), coordinate by coordinate.
/// The error per coordinate is |analytic - numeric| / max(1, |analytic|).
///
/// `f` must rebuild its graph from the current values of `inputs` on every
/// call. Throws NumericalError if f evaluates to a non-finite value.
GradCheckReport grad_check_report(const std::function<Tensor<double>()>& f, std::span<Tensor<double>> inputs,
                                  double eps = 1e-5);

inline double grad_check(const std::function<Tensor<double>()>& f, std::span<Tensor<double>> inputs,
                         double eps = 1e-5) {
  return grad_check_report(f, inputs, eps).max_relative_error;
}

}  // namespace mmv::diff
