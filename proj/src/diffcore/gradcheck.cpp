#include "mmv/diffcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace mmv::diff {

namespace {

double evaluate(const std::function<Tensor<double>()>& f) {
  NoGradGuard guard;
  const double value = f().item();
  if (!std::isfinite(value)) throw NumericalError("grad_check: function evaluated to a non-finite value");
  return value;
}

}  // namespace

GradCheckReport grad_check_report(const std::function<Tensor<double>()>& f, std::span<Tensor<double>> inputs,
                                  double eps) {
  for (auto& input : inputs) input.zero_grad();
  Tensor<double> out = f();
  if (out.size() != 1) throw DimensionError("grad_check: function must return a scalar, got " + shape_string(out.shape()));
  if (!std::isfinite(out.item())) throw NumericalError("grad_check: function evaluated to a non-finite value");
  out.backward();

  GradCheckReport report;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::vector<double> analytic = inputs[i].grad();
    auto values = inputs[i].mutable_data();
    for (std::size_t c = 0; c < values.size(); ++c) {
      const double saved = values[c];
      values[c] = saved + eps;
      const double plus = evaluate(f);
      values[c] = saved - eps;
      const double minus = evaluate(f);
      values[c] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double err = std::abs(analytic[c] - numeric) / std::max(1.0, std::abs(analytic[c]));
      ++report.coordinates;
      if (report.worst_input.empty() || err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_input = "input#" + std::to_string(i) + "[" + std::to_string(c) + "]";
      }
    }
  }
  return report;
}

}  // namespace mmv::diff
