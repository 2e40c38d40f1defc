#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmv/dataset/split.hpp"
#include "mmv/dataset/types.hpp"

namespace mmv::data {

/// Where one source field lands in the normalized vector.
struct FeatureSlot {
  std::string name;
  std::size_t offset = 0;
  std::size_t width = 1;     // 1 for numeric, vocab + 1 for categorical
  bool categorical = false;
  bool operator==(const FeatureSlot&) const = default;
};

inline constexpr double kStdFloor = 1e-6;

/// Z-scores numeric fields with statistics fitted on the training split and
/// one-hot encodes categorical fields. Each categorical block ends with a
/// reserved slot for values outside the vocabulary. Output order: numeric
/// fields, then categorical blocks, both in schema order.
class TabularNormalizer {
 public:
  TabularNormalizer() = default;

  static TabularNormalizer fit(const EhrSchema& schema, std::span<const EhrVector> rows);
  /// All-numeric variant used for interpretable features.
  static TabularNormalizer fit(const std::vector<std::string>& names, std::span<const std::vector<double>> rows);

  std::vector<double> transform(const EhrVector& row) const;
  std::vector<double> transform(std::span<const double> numeric) const;

  std::size_t width() const;
  const std::vector<FeatureSlot>& layout() const { return layout_; }
  const std::vector<double>& means() const { return mean_; }
  const std::vector<double>& stds() const { return std_; }

  nlohmann::json to_json() const;
  static TabularNormalizer from_json(const nlohmann::json& j);

  bool operator==(const TabularNormalizer&) const = default;

 private:
  void build_layout();

  std::vector<std::string> numeric_;
  std::vector<CategoricalField> categorical_;
  std::vector<double> mean_;
  std::vector<double> std_;
  std::vector<FeatureSlot> layout_;
};

/// EHR statistics from the cycles of `train` (one row per treatment).
TabularNormalizer fit_ehr_normalizer(const Dataset& dataset, std::span<const std::size_t> train);
/// Interpretable-feature statistics from every embryo of the `train` cycles.
TabularNormalizer fit_interp_normalizer(const Dataset& dataset, std::span<const std::size_t> train);

}  // namespace mmv::data
