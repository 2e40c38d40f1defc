#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mmv/cli/config.hpp"
#include "mmv/dataset/types.hpp"
#include "mmv/metrics/metrics.hpp"
#include "mmv/train/trainer.hpp"

namespace mmv::cli {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

/// Parses `args` (without the program name) and runs one subcommand:
/// gen, train, eval, predict or gradcheck.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

inline constexpr const char* kCheckpointFile = "model.ckpt";
inline constexpr const char* kSnapshotFile = "config.resolved.yaml";

/// Trains the configured model on the training split of `dataset` and
/// writes the checkpoint, history.csv and a config snapshot to `out_dir`.
train::TrainHistory train_run(const RunConfig& config, const data::Dataset& dataset,
                              const std::filesystem::path& out_dir, std::ostream* log = nullptr);

/// Per-embryo scores of a checkpoint for the cycles in `cycles`; with
/// `transferred_only` non-transferred embryos are skipped.
metrics::Predictions predict_run(const std::filesystem::path& checkpoint, const data::Dataset& dataset,
                                 const std::vector<std::size_t>& cycles, bool transferred_only);

/// Scores the configured evaluation split and writes the report to `out_dir`.
metrics::MetricsReport eval_run(const RunConfig& config, const data::Dataset& dataset,
                                const std::filesystem::path& checkpoint, const std::filesystem::path& out_dir);

/// Cycle indices of a split by name: train, val, test or all.
std::vector<std::size_t> split_cycles(const RunConfig& config, const data::Dataset& dataset,
                                      const std::string& split);

}  // namespace mmv::cli
