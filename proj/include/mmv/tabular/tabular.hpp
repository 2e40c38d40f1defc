#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmv/dataset/normalize.hpp"
#include "mmv/model/model.hpp"
#include "mmv/model/params.hpp"

namespace mmv::tabular {

/// Column-token transformer over normalized EHR and interpretable vectors.
/// Feature layouts come from the fitted normalizers: a numeric slot gets a
/// per-feature affine embedding, a categorical block a lookup table.
struct TabularConfig {
  std::size_t dim = 16;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t hidden = 0;  // 0: 4 * dim
  bool use_ehr = true;
  bool use_interp = true;
  std::vector<data::FeatureSlot> ehr_layout;
  std::vector<data::FeatureSlot> interp_layout;
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;
  std::size_t mlp() const { return hidden ? hidden : 4 * dim; }
  std::size_t feature_count() const;
  /// 1 + feature_count().
  std::size_t sequence_length() const { return 1 + feature_count(); }

  nlohmann::json to_json() const;
  static TabularConfig from_json(const nlohmann::json& j);
  bool operator==(const TabularConfig&) const = default;
};

std::size_t parameter_count(const TabularConfig& config);

template <typename T>
class TabularModel final : public model::Regressor<T> {
 public:
  explicit TabularModel(TabularConfig config);
  TabularModel(TabularConfig config, model::ParamStore<T> params);

  const TabularConfig& config() const { return config_; }
  const model::ParamStore<T>& params() const override { return params_; }
  model::ParamStore<T>& params() override { return params_; }

  /// Feature tokens with the class token first: [batch*(n+1), dim].
  diff::Tensor<T> tokenize(std::span<const model::ModelInput* const> batch) const;
  /// Reads only the EHR and interpretable vectors of each input.
  diff::Tensor<T> forward(std::span<const model::ModelInput* const> batch) const override;
  T score(const model::ModelInput& input) const;

 private:
  TabularConfig config_;
  model::ParamStore<T> params_;
};

extern template class TabularModel<float>;
extern template class TabularModel<double>;

inline constexpr const char* kTabularMagic = "MMVT1";

void save_tabular(const std::filesystem::path& file, const TabularModel<float>& model,
                  const nlohmann::json& extra = {});

struct LoadedTabular {
  TabularModel<float> model;
  nlohmann::json extra;
};
LoadedTabular load_tabular(const std::filesystem::path& file);

}  // namespace mmv::tabular
