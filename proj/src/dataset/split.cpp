#include "mmv/dataset/split.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <string>

#include "mmv/diffcore/tensor.hpp"

namespace mmv::data {

const char* split_name(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "?";
}

const std::vector<std::size_t>& SplitIndices::of(Split split) const {
  switch (split) {
    case Split::kTrain:
      return train;
    case Split::kVal:
      return val;
    default:
      return test;
  }
}

std::array<std::size_t, 3> apportion(std::size_t total, std::array<unsigned, 3> ratios) {
  const std::size_t denom = std::accumulate(ratios.begin(), ratios.end(), std::size_t{0});
  if (denom == 0) throw ConfigError("split ratios must not all be zero");
  std::array<std::size_t, 3> counts{};
  std::array<std::size_t, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    counts[i] = total * ratios[i] / denom;
    remainder[i] = total * ratios[i] % denom;
    assigned += counts[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[order[i % 3]];
  return counts;
}

SplitIndices stratified_split(std::span<const TreatmentCycle> cycles, std::array<unsigned, 3> ratios,
                              std::uint64_t seed) {
  if (cycles.size() < 10)
    throw ConfigError("stratified_split needs at least 10 treatments, got " + std::to_string(cycles.size()));
  const auto parts = static_cast<std::size_t>(std::count_if(ratios.begin(), ratios.end(), [](unsigned r) { return r > 0; }));

  std::vector<std::size_t> success, failure;
  for (std::size_t i = 0; i < cycles.size(); ++i) (cycles[i].success() ? success : failure).push_back(i);

  SplitIndices out;
  std::mt19937_64 rng(seed);
  for (auto* stratum : {&success, &failure}) {
    if (stratum->empty()) continue;
    if (stratum->size() < parts)
      throw ConfigError(std::string(stratum == &success ? "success" : "failure") + " stratum has " +
                        std::to_string(stratum->size()) + " treatments, fewer than the " + std::to_string(parts) +
                        " partitions");
    std::shuffle(stratum->begin(), stratum->end(), rng);
    const auto counts = apportion(stratum->size(), ratios);
    auto it = stratum->begin();
    for (std::size_t p = 0; p < 3; ++p) {
      auto& dest = p == 0 ? out.train : (p == 1 ? out.val : out.test);
      dest.insert(dest.end(), it, it + static_cast<std::ptrdiff_t>(counts[p]));
      it += static_cast<std::ptrdiff_t>(counts[p]);
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

}  // namespace mmv::data
