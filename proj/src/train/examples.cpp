#include "mmv/train/examples.hpp"

#include "mmv/dataset/transforms.hpp"

namespace mmv::train {

std::vector<Example> build_examples(const data::Dataset& ds, std::span<const std::size_t> cycles,
                                    const data::TabularNormalizer& ehr, const data::TabularNormalizer& interp,
                                    bool transferred_only) {
  std::vector<Example> out;
  for (std::size_t ci : cycles) {
    const data::TreatmentCycle& c = ds.cycles.at(ci);
    const std::vector<double> ehr_vec = ehr.width() ? ehr.transform(c.ehr) : std::vector<double>{};
    for (const auto& e : c.embryos) {
      if (transferred_only && !e.transferred) continue;
      Example ex;
      ex.cycle = ci;
      ex.embryo_id = e.embryo_id;
      ex.treatment_id = c.treatment_id;
      ex.sample = data::subsample_frames(e);
      ex.ehr = ehr_vec;
      if (e.interp && interp.width()) ex.interp = interp.transform(*e.interp);
      ex.target = e.label.value_or(0.0);
      out.push_back(std::move(ex));
    }
  }
  return out;
}

InputFn multimodal_inputs(const model::ModelConfig& config) {
  return [config](const Example& ex, std::mt19937_64* augment) {
    if (ex.visual_cache) {
      if (augment) throw ConfigError("train: cached visual embeddings cannot be augmented");
      model::ModelInput in;
      in.frames.frames = ex.sample.video.frames;
      if (config.use_morph && ex.sample.morph) {
        in.frames.frag = ex.sample.morph->frag;
        in.frames.stage = ex.sample.morph->stage;
      }
      in.visual_cache = ex.visual_cache;
      if (config.use_ehr) in.ehr = ex.ehr;
      if (config.use_interp) in.interp = ex.interp;
      return in;
    }
    if (augment) return model::prepare_input(data::augment_sample(ex.sample, *augment), config, ex.ehr, ex.interp);
    return model::prepare_input(ex.sample, config, ex.ehr, ex.interp);
  };
}

InputFn tabular_inputs() {
  return [](const Example& ex, std::mt19937_64*) {
    model::ModelInput in;
    in.ehr = ex.ehr;
    in.interp = ex.interp;
    return in;
  };
}

void cache_visual(const model::Model<float>& m, std::span<Example> examples) {
  const auto& c = m.config();
  if (!(c.use_video || c.use_morph)) return;
  std::vector<std::exception_ptr> errors(examples.size());
  diff::NoGradGuard guard;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(examples.size()); ++i) {
    // Grad mode is thread-local; worker threads need their own guard.
    diff::NoGradGuard local;
    Example& ex = examples[static_cast<std::size_t>(i)];
    try {
      const model::ModelInput in = model::prepare_input(ex.sample, c, ex.ehr, ex.interp);
      const auto vis = m.encode_visual(in.frames);
      ex.visual_cache = std::vector<float>(vis.data().begin(), vis.data().end());
      ex.sample.video.pixels.clear();
      ex.sample.video.pixels.shrink_to_fit();
      if (ex.sample.morph) {
        ex.sample.morph->zona = {};
        ex.sample.morph->blast = {};
        ex.sample.morph->pronuc = {};
      }
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace mmv::train
