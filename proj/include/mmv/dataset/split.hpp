#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "mmv/dataset/types.hpp"

namespace mmv::data {

enum class Split : std::uint8_t { kTrain = 0, kVal = 1, kTest = 2 };

const char* split_name(Split split);

/// Cycle indices per partition, each ascending (manifest order).
struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;

  const std::vector<std::size_t>& of(Split split) const;
};

/// Treatment-level split stratified on the success flag (n_births >= 1).
/// Each stratum is shuffled with `seed` and cut by the ratios using
/// largest-remainder rounding, so a stratum of 260 with 8:1:1 yields
/// 208/26/26. Throws ConfigError for fewer than 10 treatments or for a
/// non-empty stratum smaller than the number of partitions.
SplitIndices stratified_split(std::span<const TreatmentCycle> cycles, std::array<unsigned, 3> ratios = {8, 1, 1},
                              std::uint64_t seed = 0);

/// Largest-remainder apportionment of `total` items by `ratios`; ties in the
/// fractional part go to the earlier partition.
std::array<std::size_t, 3> apportion(std::size_t total, std::array<unsigned, 3> ratios);

}  // namespace mmv::data
