#include "mmv/dataset/types.hpp"

#include <algorithm>
#include <cmath>

namespace mmv::data {

void assign_labels(TreatmentCycle& cycle) {
  for (auto& embryo : cycle.embryos) {
    if (embryo.transferred && cycle.n_transferred > 0) {
      embryo.label = static_cast<double>(cycle.n_births) / static_cast<double>(cycle.n_transferred);
    } else {
      embryo.label.reset();
    }
  }
}

namespace {

[[noreturn]] void fail(const std::string& who, const std::string& what) { throw DataError(who + ": " + what); }

void validate_embryo(const EmbryoSample& e, const TreatmentCycle& cycle, std::size_t interp_width) {
  const std::string who = "embryo " + e.embryo_id;
  const Video& v = e.video;
  if (v.frames == 0 || v.height == 0 || v.width == 0 || v.channels == 0) fail(who, "empty video");
  if (v.pixels.size() != v.frames * v.frame_size()) fail(who, "video payload size does not match its header");
  if (e.morph) {
    const MorphFeatures& m = *e.morph;
    if (m.frames != v.frames || m.height != v.height || m.width != v.width)
      fail(who, "morphological features do not share the video's T, H, W");
    const std::size_t n = m.frames * m.plane();
    if (m.zona.size() != n || m.blast.size() != n || m.pronuc.size() != n || m.frag.size() != m.frames ||
        m.stage.size() != m.frames)
      fail(who, "morphological payload sizes are inconsistent");
    if (std::any_of(m.zona.begin(), m.zona.end(), [&](std::uint8_t c) { return c >= m.zona_classes; }))
      fail(who, "zona class id out of range");
    if (std::any_of(m.stage.begin(), m.stage.end(), [&](std::uint8_t c) { return c >= m.stage_classes; }))
      fail(who, "stage class id out of range");
    if (std::any_of(m.frag.begin(), m.frag.end(), [](float f) { return !(f >= 0.0f && f <= 1.0f); }))
      fail(who, "fragmentation outside [0,1]");
  }
  if (e.interp) {
    if (e.interp->size() != interp_width) fail(who, "interpretable features do not match the declared schema");
    if (std::any_of(e.interp->begin(), e.interp->end(), [](double x) { return !std::isfinite(x); }))
      fail(who, "non-finite interpretable feature");
  }
  if (e.transferred) {
    if (!e.label) fail(who, "transferred embryo without label");
    const double expected = static_cast<double>(cycle.n_births) / static_cast<double>(cycle.n_transferred);
    if (*e.label != expected) fail(who, "label differs from n_births / n_transferred");
  } else if (e.label) {
    fail(who, "non-transferred embryo carries a label");
  }
}

}  // namespace

void validate(const TreatmentCycle& cycle, const EhrSchema& schema, std::size_t interp_width) {
  const std::string who = "treatment " + cycle.treatment_id;
  if (cycle.treatment_id.empty()) fail("treatment", "empty treatment_id");
  if (cycle.n_births < 0 || cycle.n_transferred < 0) fail(who, "negative counts");
  if (cycle.n_births > cycle.n_transferred) fail(who, "n_births exceeds n_transferred");
  const auto flagged = std::count_if(cycle.embryos.begin(), cycle.embryos.end(),
                                     [](const EmbryoSample& e) { return e.transferred; });
  if (cycle.n_transferred > flagged) fail(who, "n_transferred exceeds the embryos flagged as transferred");
  if (flagged > 0 && cycle.n_transferred == 0) fail(who, "embryos flagged as transferred but n_transferred is 0");
  if (cycle.ehr.numeric.size() != schema.numeric.size() || cycle.ehr.categorical.size() != schema.categorical.size())
    fail(who, "EHR fields do not match the declared schema");
  for (double x : cycle.ehr.numeric)
    if (!std::isfinite(x)) fail(who, "non-finite EHR value");

  std::size_t frame_h = 0, frame_w = 0;
  for (const auto& e : cycle.embryos) {
    validate_embryo(e, cycle, interp_width);
    if (frame_h == 0) {
      frame_h = e.video.height;
      frame_w = e.video.width;
    } else if (e.video.height != frame_h || e.video.width != frame_w) {
      fail("embryo " + e.embryo_id, "frame size differs from the other embryos of " + cycle.treatment_id);
    }
  }
}

void validate(const Dataset& dataset) {
  for (const auto& cycle : dataset.cycles) validate(cycle, dataset.ehr_schema, dataset.interp_schema.size());
}

}  // namespace mmv::data
