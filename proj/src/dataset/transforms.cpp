#include "mmv/dataset/transforms.hpp"

#include <algorithm>

#include "mmv/diffcore/tensor.hpp"

namespace mmv::data {

std::vector<std::size_t> subsample_indices(std::size_t frames, std::size_t max_frames, std::size_t stride) {
  if (stride == 0) throw ConfigError("frame stride must be positive");
  std::vector<std::size_t> idx;
  const std::size_t kept = std::min(frames, max_frames);
  for (std::size_t t = 0; t < kept; t += stride) idx.push_back(t);
  return idx;
}

Video subsample_frames(const Video& video, std::size_t max_frames, std::size_t stride) {
  Video out = video;
  const auto idx = subsample_indices(video.frames, max_frames, stride);
  out.frames = idx.size();
  out.pixels.clear();
  out.pixels.reserve(idx.size() * video.frame_size());
  for (auto t : idx) out.pixels.insert(out.pixels.end(), video.frame(t), video.frame(t) + video.frame_size());
  return out;
}

MorphFeatures subsample_frames(const MorphFeatures& morph, std::size_t max_frames, std::size_t stride) {
  MorphFeatures out = morph;
  const auto idx = subsample_indices(morph.frames, max_frames, stride);
  const std::size_t plane = morph.plane();
  out.frames = idx.size();
  for (auto* vol : {&out.zona, &out.blast, &out.pronuc}) vol->clear();
  out.frag.clear();
  out.stage.clear();
  for (auto t : idx) {
    const auto off = static_cast<std::ptrdiff_t>(t * plane), len = static_cast<std::ptrdiff_t>(plane);
    out.zona.insert(out.zona.end(), morph.zona.begin() + off, morph.zona.begin() + off + len);
    out.blast.insert(out.blast.end(), morph.blast.begin() + off, morph.blast.begin() + off + len);
    out.pronuc.insert(out.pronuc.end(), morph.pronuc.begin() + off, morph.pronuc.begin() + off + len);
    out.frag.push_back(morph.frag[t]);
    out.stage.push_back(morph.stage[t]);
  }
  return out;
}

EmbryoSample subsample_frames(const EmbryoSample& sample, std::size_t max_frames, std::size_t stride) {
  EmbryoSample out = sample;
  out.video = subsample_frames(sample.video, max_frames, stride);
  if (sample.morph) out.morph = subsample_frames(*sample.morph, max_frames, stride);
  return out;
}

std::pair<std::size_t, std::size_t> map_point(const SpatialTransform& transform, std::size_t row, std::size_t col,
                                              std::size_t size) {
  const std::size_t last = size - 1;
  if (transform.flip == Flip::kHorizontal) col = last - col;
  if (transform.flip == Flip::kVertical) row = last - row;
  for (int q = 0; q < transform.quarter_turns % 4; ++q) {
    const std::size_t r = last - col;
    col = row;
    row = r;
  }
  return {row, col};
}

namespace {

// Remaps a stack of `planes` planes of side x side cells, each cell
// `cell` values wide.
template <typename V>
std::vector<V> remap(const std::vector<V>& src, std::size_t planes, std::size_t side, std::size_t cell,
                     const std::vector<std::size_t>& dest_of) {
  std::vector<V> out(src.size());
  const std::size_t plane = side * side;
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < plane; ++i) {
      const V* from = src.data() + (p * plane + i) * cell;
      std::copy(from, from + cell, out.data() + (p * plane + dest_of[i]) * cell);
    }
  }
  return out;
}

}  // namespace

EmbryoSample apply_transform(const EmbryoSample& sample, const SpatialTransform& transform) {
  if (transform == SpatialTransform{}) return sample;
  const Video& v = sample.video;
  if (v.height != v.width)
    throw ConfigError("flip/rotation augmentation needs square frames, embryo " + sample.embryo_id + " is " +
                      std::to_string(v.height) + "x" + std::to_string(v.width));
  const std::size_t side = v.height;
  std::vector<std::size_t> dest(side * side);
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      const auto [r2, c2] = map_point(transform, r, c, side);
      dest[r * side + c] = r2 * side + c2;
    }
  }
  EmbryoSample out = sample;
  out.video.pixels = remap(v.pixels, v.frames, side, v.channels, dest);
  if (out.morph) {
    const auto& m = *sample.morph;
    out.morph->zona = remap(m.zona, m.frames, side, 1, dest);
    out.morph->blast = remap(m.blast, m.frames, side, 1, dest);
    out.morph->pronuc = remap(m.pronuc, m.frames, side, 1, dest);
  }
  return out;
}

SpatialTransform draw_transform(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, 11);
  const int k = pick(rng);
  return {static_cast<Flip>(k / 4), static_cast<std::uint8_t>(k % 4)};
}

EmbryoSample augment_sample(const EmbryoSample& sample, std::mt19937_64& rng) {
  return apply_transform(sample, draw_transform(rng));
}

}  // namespace mmv::data
