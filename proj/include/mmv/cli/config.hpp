#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mmv/model/model.hpp"
#include "mmv/synth/synth.hpp"
#include "mmv/tabular/tabular.hpp"
#include "mmv/train/trainer.hpp"

namespace mmv::cli {

/// Which inputs a run feeds the model: v (video), v' (morphological
/// features), e (EHR), e' (interpretable features).
struct Modality {
  bool video = false;
  bool morph = false;
  bool ehr = false;
  bool interp = false;

  /// Selectors without v or v' train the tabular model.
  bool tabular() const { return !video && !morph; }
  std::string str() const;
  bool operator==(const Modality&) const = default;
};

/// Accepts v, v+e, v+v', v+v'+e+e', v', v'+e+e', e, e+e', e' (the prime may
/// also be written as U+2032). Throws ConfigError for anything else.
Modality parse_modality(const std::string& text);

/// Everything a command needs. Fields derived from the dataset or the
/// modality (frame size, class counts, tabular widths, use_* flags, seeds)
/// are filled in by the commands, not read from the file.
struct RunConfig {
  synth::SynthConfig synth;
  model::ModelConfig model;
  tabular::TabularConfig tabular;
  train::TrainConfig train;
  std::filesystem::path data_dir = "data";
  std::filesystem::path out_dir = "out";
  std::string modality = "v+v'+e+e'";
  std::uint64_t seed = 0;        // model init, shuffling, augmentation
  std::uint64_t split_seed = 0;  // treatment split, fixed across repeats
  std::string eval_split = "test";

  /// Throws ConfigError.
  void validate() const;
  Modality selector() const { return parse_modality(modality); }
};

/// Parses YAML with sections synth, model, tabular, train, paths and run.
/// Missing keys keep their defaults; unknown sections or keys are errors.
/// Relative paths resolve against `base_dir`.
RunConfig parse_run_config(const std::string& yaml, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& file);

/// Every configurable field with its resolved value; parsing the result
/// yields an equal config.
std::string to_yaml(const RunConfig& config);

}  // namespace mmv::cli
