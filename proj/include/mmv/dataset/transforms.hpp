#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "mmv/dataset/types.hpp"

namespace mmv::data {

inline constexpr std::size_t kMaxFrames = 360;
inline constexpr std::size_t kFrameStride = 4;

/// Frame indices kept after clipping to `max_frames` and taking every
/// `stride`-th frame from offset 0.
std::vector<std::size_t> subsample_indices(std::size_t frames, std::size_t max_frames = kMaxFrames,
                                           std::size_t stride = kFrameStride);

Video subsample_frames(const Video& video, std::size_t max_frames = kMaxFrames, std::size_t stride = kFrameStride);
MorphFeatures subsample_frames(const MorphFeatures& morph, std::size_t max_frames = kMaxFrames,
                               std::size_t stride = kFrameStride);
/// Subsamples the video and morphological features together.
EmbryoSample subsample_frames(const EmbryoSample& sample, std::size_t max_frames = kMaxFrames,
                              std::size_t stride = kFrameStride);

enum class Flip : std::uint8_t { kNone = 0, kHorizontal = 1, kVertical = 2 };

/// One of the 12 flip x rotation combinations: flip first, then rotate
/// counter-clockwise by 90 degrees `quarter_turns` times.
struct SpatialTransform {
  Flip flip = Flip::kNone;
  std::uint8_t quarter_turns = 0;
  bool operator==(const SpatialTransform&) const = default;
};

/// Destination of pixel (row, col) in a square frame of side `size`.
std::pair<std::size_t, std::size_t> map_point(const SpatialTransform& transform, std::size_t row, std::size_t col,
                                              std::size_t size);

/// Applies the transform to every frame and every mask plane. Scalars,
/// labels and tabular fields are untouched. Needs square frames.
EmbryoSample apply_transform(const EmbryoSample& sample, const SpatialTransform& transform);

/// Uniform draw over the 12 combinations.
SpatialTransform draw_transform(std::mt19937_64& rng);

EmbryoSample augment_sample(const EmbryoSample& sample, std::mt19937_64& rng);

}  // namespace mmv::data
