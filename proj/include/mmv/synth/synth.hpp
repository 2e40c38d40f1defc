#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mmv/dataset/types.hpp"

namespace mmv::synth {

/// Generator settings. Signal weights route the planted viability signal
/// through the video appearance, the EHR record, and the morphokinetics that
/// the masks, stage/fragmentation channels and interpretable features expose.
struct SynthConfig {
  std::size_t n_treatments = 20;
  std::size_t min_embryos = 2;
  std::size_t max_embryos = 6;
  std::size_t frames = 120;      // raw frames per video, 20 minutes apart
  std::size_t frame_size = 32;   // H = W
  double success_rate = 0.3;     // target fraction of treatments with >= 1 birth
  double w_video = 0.3;
  double w_ehr = 0.3;
  double w_morph = 0.4;
  double signal_strength = 10.0;  // logit scale of the planted score
  double pixel_noise = 0.12;      // std of additive noise on [0,1] intensities
  double interp_noise = 0.03;     // std of feature noise as a fraction of each feature's scale
  double selection_noise = 0.15;  // std of the embryologist's quality proxy
  double sibling_correlation = 0.5;  // weight of the treatment-level share in quality and appearance
  std::size_t zona_width = 3;     // annulus thickness in pixels
  std::uint8_t stage_classes = 9;
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;
};

inline constexpr double kMinutesPerFrame = 20.0;
inline constexpr std::size_t kMaxDivisions = 3;
inline constexpr std::uint8_t kZonaClasses = 3;  // background, zona, interior

/// Hidden per-embryo state that every rendered modality derives from.
struct SynthLatent {
  double quality = 0.5;     // morphokinetic quality: timing, regularity, fragmentation
  double appearance = 0.5;  // cytoplasm appearance, visible only in raw video
  std::vector<std::size_t> events;  // division frames, strictly increasing
  double frag = 0.0;
  double asymmetry = 0.0;           // radius shrink amplitude in [0, 0.25]
  std::vector<std::vector<double>> radius_draws;  // per stage, per cell, in [0,1)
  double orientation = 0.0;         // radians
  double treatment_factor = 0.5;    // u of the owning treatment
  std::uint64_t render_seed = 0;
};

struct RenderedEmbryo {
  data::Video video;
  data::MorphFeatures morph;
  /// Per frame, per blastomere radius actually drawn (empty when 1 cell).
  std::vector<std::vector<double>> radii;
};

/// Names of the interpretable features, in emission order.
const std::vector<std::string>& interp_schema();
data::EhrSchema ehr_schema();

/// Frame geometry derived from the config; throws ConfigError when the
/// annulus and blastomeres do not fit the frame.
struct Geometry {
  double center = 0.0;
  double outer_radius = 0.0;
  double inner_radius = 0.0;
};
Geometry geometry(const SynthConfig& config);

/// Renders the zona annulus with 1 -> 2 -> 4 -> 8 blastomeres dividing at the
/// latent's event frames, fragmentation speckle and pixel noise, together
/// with the matching masks, fragmentation track and stage ids.
RenderedEmbryo render_embryo_video(const SynthLatent& latent, const SynthConfig& config);

/// Transition timings (minutes), symmetry index, zona thickness (pixels) and
/// mean fragmentation, each with additive noise of the configured level.
std::vector<double> derive_interpretable(const SynthLatent& latent, const RenderedEmbryo& rendered,
                                         const SynthConfig& config, std::mt19937_64& rng);

/// Zona thickness measured on a zona class mask (outer minus inner radius of
/// the equal-area discs).
double measure_zona_thickness(const std::uint8_t* zona_plane, std::size_t side);

/// Mean over frames of min/max blastomere radius (1 for single-cell frames).
double symmetry_index(const std::vector<std::vector<double>>& radii);

struct GeneratedCorpus {
  data::Dataset dataset;
  std::vector<std::vector<SynthLatent>> latents;  // per treatment, per embryo
  double logit_offset = 0.0;                      // calibrated intercept
};

/// Deterministic in the config. Treatments draw from independent RNG streams
/// keyed by (seed, treatment index), so generation order does not matter.
GeneratedCorpus generate_corpus(const SynthConfig& config);

/// Generates and writes a dataset directory; returns the in-memory corpus.
GeneratedCorpus generate_dataset(const SynthConfig& config, const std::filesystem::path& root);

/// Viability probability of one transferred embryo.
double birth_probability(const SynthLatent& latent, const SynthConfig& config, double logit_offset);

}  // namespace mmv::synth
