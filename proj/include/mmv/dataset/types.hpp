#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmv::data {

/// Missing files, bad magic, schema or invariant violations in on-disk data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// T x H x W x C stack of 8-bit frames, row-major.
struct Video {
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  std::size_t frame_size() const { return height * width * channels; }
  const std::uint8_t* frame(std::size_t t) const { return pixels.data() + t * frame_size(); }
  bool operator==(const Video&) const = default;
};

/// Per-frame machine annotations of one embryo video.
struct MorphFeatures {
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::uint8_t zona_classes = 3;   // K_z
  std::uint8_t stage_classes = 9;  // K_s
  std::vector<std::uint8_t> zona;    // class ids, T*H*W
  std::vector<std::uint8_t> blast;   // instance ids, 0 = background
  std::vector<std::uint8_t> pronuc;  // instance ids, 0 = background
  std::vector<float> frag;           // T, in [0,1]
  std::vector<std::uint8_t> stage;   // T, class ids

  std::size_t plane() const { return height * width; }
  bool operator==(const MorphFeatures&) const = default;
};

struct CategoricalField {
  std::string name;
  std::vector<std::string> vocab;
  bool operator==(const CategoricalField&) const = default;
};

struct EhrSchema {
  std::vector<std::string> numeric;
  std::vector<CategoricalField> categorical;
  bool operator==(const EhrSchema&) const = default;
};

/// One EHR record, fields in schema order.
struct EhrVector {
  std::vector<double> numeric;
  std::vector<std::string> categorical;
  bool operator==(const EhrVector&) const = default;
};

struct EmbryoSample {
  std::string embryo_id;
  Video video;
  std::optional<MorphFeatures> morph;
  std::optional<std::vector<double>> interp;  // interpretable features, schema order
  bool transferred = false;
  std::optional<double> label;  // n_births / n_transferred for transferred embryos
  bool operator==(const EmbryoSample&) const = default;
};

struct TreatmentCycle {
  std::string treatment_id;
  EhrVector ehr;
  std::vector<EmbryoSample> embryos;
  int n_transferred = 0;
  int n_births = 0;

  bool success() const { return n_births >= 1; }
  bool operator==(const TreatmentCycle&) const = default;
};

struct Dataset {
  EhrSchema ehr_schema;
  std::vector<std::string> interp_schema;
  std::vector<TreatmentCycle> cycles;
  bool operator==(const Dataset&) const = default;
};

/// Sets every transferred embryo's label to n_births / n_transferred and
/// clears the label of the others.
void assign_labels(TreatmentCycle& cycle);

/// Throws DataError naming the offending treatment or embryo.
void validate(const Dataset& dataset);
void validate(const TreatmentCycle& cycle, const EhrSchema& ehr_schema, std::size_t interp_width);

}  // namespace mmv::data
