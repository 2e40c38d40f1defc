#pragma once

#include <string>
#include <vector>

namespace mmv::cli {

struct GradCheckEntry {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
};

/// Gradient checks in 64-bit over every differentiable op, one transformer
/// block, the full multimodal forward pass of a toy model (all modalities,
/// padded frames) and the tabular model.
std::vector<GradCheckEntry> run_gradcheck_suite(unsigned seed = 2024);

}  // namespace mmv::cli
