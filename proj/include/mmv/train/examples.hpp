#pragma once

#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mmv/dataset/normalize.hpp"
#include "mmv/dataset/types.hpp"
#include "mmv/model/model.hpp"

namespace mmv::train {

/// One embryo ready for a model: subsampled media, normalized tabular
/// vectors and the regression target.
struct Example {
  std::size_t cycle = 0;  // index into the dataset's cycles
  std::string embryo_id;
  std::string treatment_id;
  data::EmbryoSample sample;  // subsampled; media may be dropped after caching
  std::vector<double> ehr;
  std::vector<double> interp;
  double target = 0.0;        // n_births / n_transferred, 0 for non-transferred
  std::optional<std::vector<float>> visual_cache;
};

/// Examples for the embryos of `cycles`, in manifest order. With
/// `transferred_only` the non-transferred embryos are skipped. The
/// interpretable normalizer may be unfitted (width 0) when embryos carry no
/// interpretable features.
std::vector<Example> build_examples(const data::Dataset& dataset, std::span<const std::size_t> cycles,
                                    const data::TabularNormalizer& ehr, const data::TabularNormalizer& interp,
                                    bool transferred_only);

/// Builds a model input; a non-null rng requests a random flip/rotation.
using InputFn = std::function<model::ModelInput(const Example&, std::mt19937_64* augment)>;

InputFn multimodal_inputs(const model::ModelConfig& config);
/// Tabular models read only the EHR and interpretable vectors.
InputFn tabular_inputs();

/// Stores the frozen spatial embeddings of every example and drops the
/// pixel and mask planes. Cached examples cannot be augmented.
void cache_visual(const model::Model<float>& model, std::span<Example> examples);

}  // namespace mmv::train
