#include "mmv/model/model.hpp"

#include <algorithm>

#include "mmv/diffcore/ops.hpp"
#include "mmv/model/transformer.hpp"

namespace mmv::model {

using diff::Tensor;

const char* visual_name(Visual v) {
  switch (v) {
    case Visual::kVideo:
      return "video";
    case Visual::kZona:
      return "zona";
    case Visual::kBlast:
      return "blast";
    case Visual::kPronuc:
      return "pronuc";
  }
  return "?";
}

// ---------------------------------------------------------------- config

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model: " + what);
  };
  need(patch > 0 && frame_size > 0 && frame_size % patch == 0,
       "frame_size " + std::to_string(frame_size) + " not divisible by patch " + std::to_string(patch));
  need(spatial_dim > 0 && spatial_heads > 0 && spatial_dim % spatial_heads == 0,
       "spatial_dim must be divisible by spatial_heads");
  need(dim > 0 && heads > 0 && dim % heads == 0, "dim must be divisible by heads");
  need(use_video || use_morph || use_ehr || use_interp, "at least one modality must be enabled");
  need(!use_ehr || ehr_width > 0, "use_ehr needs a positive ehr_width");
  need(!use_interp || interp_width > 0, "use_interp needs a positive interp_width");
  need(max_frames >= 1, "max_frames must be positive");
  need(zona_classes >= 1 && zona_classes <= 255, "zona_classes must be in [1,255]");
  need(stage_classes >= 1 && stage_classes <= 255, "stage_classes must be in [1,255]");
}

std::size_t ModelConfig::channels(Visual v) const {
  switch (v) {
    case Visual::kVideo:
      return 1;
    case Visual::kZona:
      return zona_classes;
    case Visual::kBlast:
    case Visual::kPronuc:
      return 2;
  }
  return 0;
}

std::vector<Visual> ModelConfig::visual_inputs() const {
  std::vector<Visual> out;
  if (use_video) out.push_back(Visual::kVideo);
  if (use_morph) out.insert(out.end(), {Visual::kZona, Visual::kBlast, Visual::kPronuc});
  return out;
}

std::size_t ModelConfig::fused_width() const {
  return visual_inputs().size() * spatial_dim + (use_morph ? rc_width() : 0);
}

std::size_t ModelConfig::sequence_length() const {
  const bool frames = use_video || use_morph;
  return 1 + (frames ? max_frames : 0) + (use_ehr ? 1 : 0) + (use_interp ? 1 : 0);
}

nlohmann::json ModelConfig::to_json() const {
  return {{"frame_size", frame_size},
          {"patch", patch},
          {"spatial_dim", spatial_dim},
          {"spatial_layers", spatial_layers},
          {"spatial_heads", spatial_heads},
          {"spatial_hidden", spatial_hidden},
          {"dim", dim},
          {"layers", layers},
          {"heads", heads},
          {"hidden", hidden},
          {"head_hidden", head_hidden},
          {"rc_dim", rc_dim},
          {"use_video", use_video},
          {"use_morph", use_morph},
          {"use_ehr", use_ehr},
          {"use_interp", use_interp},
          {"zona_classes", zona_classes},
          {"stage_classes", stage_classes},
          {"ehr_width", ehr_width},
          {"interp_width", interp_width},
          {"max_frames", max_frames},
          {"freeze_spatial", freeze_spatial},
          {"share_spatial", share_spatial},
          {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  j.at("frame_size").get_to(c.frame_size);
  j.at("patch").get_to(c.patch);
  j.at("spatial_dim").get_to(c.spatial_dim);
  j.at("spatial_layers").get_to(c.spatial_layers);
  j.at("spatial_heads").get_to(c.spatial_heads);
  j.at("spatial_hidden").get_to(c.spatial_hidden);
  j.at("dim").get_to(c.dim);
  j.at("layers").get_to(c.layers);
  j.at("heads").get_to(c.heads);
  j.at("hidden").get_to(c.hidden);
  j.at("head_hidden").get_to(c.head_hidden);
  j.at("rc_dim").get_to(c.rc_dim);
  j.at("use_video").get_to(c.use_video);
  j.at("use_morph").get_to(c.use_morph);
  j.at("use_ehr").get_to(c.use_ehr);
  j.at("use_interp").get_to(c.use_interp);
  j.at("zona_classes").get_to(c.zona_classes);
  j.at("stage_classes").get_to(c.stage_classes);
  j.at("ehr_width").get_to(c.ehr_width);
  j.at("interp_width").get_to(c.interp_width);
  j.at("max_frames").get_to(c.max_frames);
  j.at("freeze_spatial").get_to(c.freeze_spatial);
  j.at("share_spatial").get_to(c.share_spatial);
  j.at("seed").get_to(c.seed);
  c.validate();
  return c;
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.spatial_dim, D = c.dim;
  const auto visual = c.visual_inputs();
  std::size_t n = 0;
  for (Visual v : visual) n += c.patch * c.patch * c.channels(v) * d + d;
  if (!visual.empty()) {
    const std::size_t trunks = c.share_spatial ? 1 : visual.size();
    n += trunks * (d + (c.patches() + 1) * d + c.spatial_layers * block_param_count(d, c.spatial_mlp()));
    if (c.use_morph) n += (1 + c.stage_classes) * c.rc_width() + c.rc_width();
    n += c.fused_width() * D + D;
  }
  if (c.use_ehr) n += c.ehr_width * D + D;
  if (c.use_interp) n += c.interp_width * D + D;
  n += D + c.sequence_length() * D + c.layers * block_param_count(D, c.mlp());
  n += 2 * D + D * c.head_width() + c.head_width() + c.head_width() + 1;
  return n;
}

// ---------------------------------------------------------------- inputs

const std::vector<float>& FrameStack::of(Visual v) const {
  switch (v) {
    case Visual::kVideo:
      return video;
    case Visual::kZona:
      return zona;
    case Visual::kBlast:
      return blast;
    case Visual::kPronuc:
      return pronuc;
  }
  return video;
}

void rasterize_instances(const std::uint8_t* ids, std::size_t side, float* out) {
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) {
      const std::size_t p = r * side + c;
      const std::uint8_t id = ids[p];
      bool edge = false;
      if (id != 0) {
        edge = (r > 0 && ids[p - side] != id) || (r + 1 < side && ids[p + side] != id) ||
               (c > 0 && ids[p - 1] != id) || (c + 1 < side && ids[p + 1] != id);
      }
      out[2 * p] = id != 0 ? 1.0f : 0.0f;
      out[2 * p + 1] = edge ? 1.0f : 0.0f;
    }
}

ModelInput prepare_input(const data::EmbryoSample& s, const ModelConfig& c, std::vector<double> ehr,
                         std::vector<double> interp) {
  const std::string who = "embryo " + s.embryo_id;
  ModelInput in;
  FrameStack& f = in.frames;
  const data::Video& v = s.video;
  if (v.height != c.frame_size || v.width != c.frame_size)
    throw data::DataError(who + ": frame size " + std::to_string(v.height) + "x" + std::to_string(v.width) +
                          " does not match the model's " + std::to_string(c.frame_size));
  if (v.channels != 1) throw data::DataError(who + ": expected single-channel video");
  f.frames = v.frames;
  const std::size_t plane = v.height * v.width;
  if (c.use_video) {
    f.video.resize(v.pixels.size());
    std::transform(v.pixels.begin(), v.pixels.end(), f.video.begin(),
                   [](std::uint8_t p) { return static_cast<float>(p) / 255.0f; });
  }
  if (c.use_morph) {
    if (!s.morph) throw data::DataError(who + ": model uses morphological features but none were loaded");
    const data::MorphFeatures& m = *s.morph;
    if (m.zona_classes != c.zona_classes || m.stage_classes != c.stage_classes)
      throw data::DataError(who + ": mask class counts do not match the model config");
    f.zona.assign(m.frames * plane * c.zona_classes, 0.0f);
    for (std::size_t i = 0; i < m.zona.size(); ++i) f.zona[i * c.zona_classes + m.zona[i]] = 1.0f;
    f.blast.resize(m.frames * plane * 2);
    f.pronuc.resize(m.frames * plane * 2);
    for (std::size_t t = 0; t < m.frames; ++t) {
      rasterize_instances(m.blast.data() + t * plane, v.width, f.blast.data() + t * plane * 2);
      rasterize_instances(m.pronuc.data() + t * plane, v.width, f.pronuc.data() + t * plane * 2);
    }
    f.frag = m.frag;
    f.stage = m.stage;
  }
  if (c.use_ehr) {
    if (ehr.size() != c.ehr_width) throw data::DataError(who + ": EHR vector width does not match the model");
    in.ehr = std::move(ehr);
  }
  if (c.use_interp) {
    if (interp.size() != c.interp_width)
      throw data::DataError(who + ": interpretable vector width does not match the model");
    in.interp = std::move(interp);
  }
  return in;
}

// ---------------------------------------------------------------- model

template <typename T>
std::string Model<T>::trunk(Visual v) const {
  return config_.share_spatial ? std::string("spatial") : std::string("spatial.") + visual_name(v);
}

template <typename T>
Model<T>::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  ParamStore<T>& s = params_;
  const ModelConfig& c = config_;
  const std::size_t d = c.spatial_dim, D = c.dim;
  const auto visual = c.visual_inputs();

  for (Visual v : visual) {
    const std::string name = std::string("spatial.patch.") + visual_name(v);
    s.create(name + ".w", {c.patch * c.patch * c.channels(v), d}, Init::kNormal, rng);
    s.create(name + ".b", {d}, Init::kZeros, rng);
  }
  std::vector<std::string> trunks;
  for (Visual v : visual)
    if (std::find(trunks.begin(), trunks.end(), trunk(v)) == trunks.end()) trunks.push_back(trunk(v));
  for (const auto& t : trunks) {
    s.create(t + ".cls", {1, d}, Init::kNormal, rng);
    s.create(t + ".pos", {c.patches() + 1, d}, Init::kNormal, rng);
    for (std::size_t l = 0; l < c.spatial_layers; ++l)
      add_block_params(s, t + ".block" + std::to_string(l), d, c.spatial_mlp(), rng);
  }
  if (!visual.empty()) {
    if (c.use_morph) {
      s.create("fusion.rc.w", {1 + c.stage_classes, c.rc_width()}, Init::kNormal, rng);
      s.create("fusion.rc.b", {c.rc_width()}, Init::kZeros, rng);
    }
    s.create("fusion.proj.w", {c.fused_width(), D}, Init::kNormal, rng);
    s.create("fusion.proj.b", {D}, Init::kZeros, rng);
  }
  if (c.use_ehr) {
    s.create("tabular.ehr.w", {c.ehr_width, D}, Init::kNormal, rng);
    s.create("tabular.ehr.b", {D}, Init::kZeros, rng);
  }
  if (c.use_interp) {
    s.create("tabular.interp.w", {c.interp_width, D}, Init::kNormal, rng);
    s.create("tabular.interp.b", {D}, Init::kZeros, rng);
  }
  s.create("temporal.cls", {1, D}, Init::kNormal, rng);
  s.create("temporal.pos", {c.sequence_length(), D}, Init::kNormal, rng);
  for (std::size_t l = 0; l < c.layers; ++l) add_block_params(s, "temporal.block" + std::to_string(l), D, c.mlp(), rng);
  s.create("head.ln.g", {D}, Init::kOnes, rng);
  s.create("head.ln.b", {D}, Init::kZeros, rng);
  s.create("head.fc1.w", {D, c.head_width()}, Init::kNormal, rng);
  s.create("head.fc1.b", {c.head_width()}, Init::kZeros, rng);
  s.create("head.fc2.w", {c.head_width(), 1}, Init::kNormal, rng);
  s.create("head.fc2.b", {1}, Init::kZeros, rng);

  if (c.freeze_spatial) s.set_trainable("spatial", false);
}

template <typename T>
Model<T>::Model(ModelConfig config, ParamStore<T> params) : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  check_params();
  if (config_.freeze_spatial) params_.set_trainable("spatial", false);
}

template <typename T>
void Model<T>::check_params() const {
  const Model<T> reference(config_);
  const auto& want = reference.params();
  if (want.names() != params_.names()) throw ConfigError("model: parameter names do not match the config");
  for (std::size_t i = 0; i < want.size(); ++i)
    if (want.tensors()[i].shape() != params_.tensors()[i].shape())
      throw ConfigError("model: parameter " + want.names()[i] + " has shape " +
                        shape_string(params_.tensors()[i].shape()) + ", expected " +
                        shape_string(want.tensors()[i].shape()));
}

template <typename T>
Tensor<T> Model<T>::patch_embed(std::span<const float> frames, std::size_t n, Visual v) const {
  const ModelConfig& c = config_;
  const std::size_t H = c.frame_size, h = c.patch, C = c.channels(v);
  const std::size_t grid = H / h, N = c.patches(), P = h * h * C;
  if (std::find(c.visual_inputs().begin(), c.visual_inputs().end(), v) == c.visual_inputs().end())
    throw ConfigError(std::string("model: visual input ") + visual_name(v) + " is disabled");
  if (frames.size() != n * H * H * C)
    throw DimensionError(std::string("patch_embed: ") + visual_name(v) + " expects " + std::to_string(n) + "x" +
                         std::to_string(H) + "x" + std::to_string(H) + "x" + std::to_string(C) + " values, got " +
                         std::to_string(frames.size()));

  std::vector<T> patches(n * N * P);
  for (std::size_t f = 0; f < n; ++f)
    for (std::size_t gy = 0; gy < grid; ++gy)
      for (std::size_t gx = 0; gx < grid; ++gx) {
        T* dst = patches.data() + ((f * N) + gy * grid + gx) * P;
        for (std::size_t dy = 0; dy < h; ++dy)
          for (std::size_t dx = 0; dx < h; ++dx) {
            const float* src = frames.data() + ((f * H + gy * h + dy) * H + gx * h + dx) * C;
            for (std::size_t ch = 0; ch < C; ++ch) *dst++ = static_cast<T>(src[ch]);
          }
      }
  const std::string name = std::string("spatial.patch.") + visual_name(v);
  const Tensor<T> x = Tensor<T>::from({n * N, P}, std::move(patches));
  const Tensor<T> proj = diff::linear(x, params_.get(name + ".w"), params_.get(name + ".b"));

  const std::string t = trunk(v);
  std::vector<std::ptrdiff_t> token_idx, pos_idx;
  for (std::size_t f = 0; f < n; ++f) {
    token_idx.push_back(0);
    pos_idx.push_back(0);
    for (std::size_t j = 0; j < N; ++j) {
      token_idx.push_back(static_cast<std::ptrdiff_t>(1 + f * N + j));
      pos_idx.push_back(static_cast<std::ptrdiff_t>(1 + j));
    }
  }
  const std::array<Tensor<T>, 2> pool = {params_.get(t + ".cls"), proj};
  const Tensor<T> tokens = diff::gather_rows(diff::concat_rows<T>(pool), token_idx);
  return diff::add(tokens, diff::gather_rows(params_.get(t + ".pos"), pos_idx));
}

template <typename T>
Tensor<T> Model<T>::spatial_encode(std::span<const float> frames, std::size_t n, Visual v) const {
  const std::size_t S = config_.patches() + 1;
  Tensor<T> z = patch_embed(frames, n, v);
  for (std::size_t l = 0; l < config_.spatial_layers; ++l)
    z = transformer_block(z, params_, trunk(v) + ".block" + std::to_string(l), n, S, config_.spatial_heads);
  std::vector<std::ptrdiff_t> cls(n);
  for (std::size_t f = 0; f < n; ++f) cls[f] = static_cast<std::ptrdiff_t>(f * S);
  return diff::gather_rows(z, cls);
}

template <typename T>
Tensor<T> Model<T>::encode_visual(const FrameStack& frames) const {
  std::vector<Tensor<T>> parts;
  for (Visual v : config_.visual_inputs()) parts.push_back(spatial_encode(frames.of(v), frames.frames, v));
  if (parts.empty()) throw ConfigError("model: no visual input enabled");
  return parts.size() == 1 ? parts[0] : diff::concat_cols<T>(parts);
}

template <typename T>
Tensor<T> Model<T>::fuse_frame_tokens(const Tensor<T>& visual, const FrameStack& frames) const {
  const ModelConfig& c = config_;
  const std::size_t n = frames.frames;
  const std::size_t vis_width = c.visual_inputs().size() * c.spatial_dim;
  if (visual.rank() != 2 || visual.dim(0) != n || visual.dim(1) != vis_width)
    throw DimensionError("fuse_frame_tokens: visual embedding " + shape_string(visual.shape()) + " vs expected [" +
                         std::to_string(n) + "x" + std::to_string(vis_width) + "]");
  Tensor<T> fused = visual;
  if (c.use_morph) {
    if (frames.frag.size() != n || frames.stage.size() != n)
      throw DimensionError("fuse_frame_tokens: fragmentation/stage tracks do not cover every frame");
    std::vector<T> rc(n * (1 + c.stage_classes), T(0));
    for (std::size_t f = 0; f < n; ++f) {
      if (frames.stage[f] >= c.stage_classes) throw data::DataError("stage id out of range");
      rc[f * (1 + c.stage_classes)] = static_cast<T>(frames.frag[f]);
      rc[f * (1 + c.stage_classes) + 1 + frames.stage[f]] = T(1);
    }
    const Tensor<T> rc_in = Tensor<T>::from({n, 1 + c.stage_classes}, std::move(rc));
    const std::array<Tensor<T>, 2> parts = {
        visual, diff::linear(rc_in, params_.get("fusion.rc.w"), params_.get("fusion.rc.b"))};
    fused = diff::concat_cols<T>(parts);
  } else if (!frames.frag.empty() || !frames.stage.empty() || !frames.zona.empty()) {
    throw ConfigError("fuse_frame_tokens: morphological input supplied to a model without use_morph");
  }
  return diff::linear(fused, params_.get("fusion.proj.w"), params_.get("fusion.proj.b"));
}

template <typename T>
Sequence<T> Model<T>::build_sequence(std::span<const Tensor<T>> frame_tokens,
                                     std::span<const ModelInput* const> inputs) const {
  const ModelConfig& c = config_;
  const std::size_t B = inputs.size(), D = c.dim;
  const bool frames = c.use_video || c.use_morph;
  const std::size_t F = frames ? c.max_frames : 0;
  if (B == 0) throw DimensionError("build_sequence: empty batch");
  if (frames && frame_tokens.size() != B) throw DimensionError("build_sequence: one frame-token block per sample");

  std::vector<Tensor<T>> pool = {params_.get("temporal.cls")};
  std::vector<std::size_t> frame_offset(B, 0);
  std::size_t rows = 1;
  for (std::size_t b = 0; b < frame_tokens.size(); ++b) {
    const auto& ft = frame_tokens[b];
    if (ft.rank() != 2 || ft.dim(1) != D) throw DimensionError("build_sequence: frame tokens must be [n, D]");
    if (ft.dim(0) > F)
      throw ConfigError("model: " + std::to_string(ft.dim(0)) + " frames exceed the " + std::to_string(F) +
                        " frame slots");
    frame_offset[b] = rows;
    rows += ft.dim(0);
    pool.push_back(ft);
  }
  auto tabular = [&](bool on, const std::string& name, std::size_t width, auto member) -> std::size_t {
    if (!on) return 0;
    std::vector<T> x(B * width);
    for (std::size_t b = 0; b < B; ++b) {
      const std::vector<double>& v = inputs[b]->*member;
      if (v.size() != width) throw DimensionError("build_sequence: " + name + " vector has width " +
                                                  std::to_string(v.size()) + ", expected " + std::to_string(width));
      std::transform(v.begin(), v.end(), x.begin() + static_cast<std::ptrdiff_t>(b * width),
                     [](double a) { return static_cast<T>(a); });
    }
    const Tensor<T> in = Tensor<T>::from({B, width}, std::move(x));
    pool.push_back(diff::linear(in, params_.get("tabular." + name + ".w"), params_.get("tabular." + name + ".b")));
    const std::size_t at = rows;
    rows += B;
    return at;
  };
  const std::size_t ehr_at = tabular(c.use_ehr, "ehr", c.ehr_width, &ModelInput::ehr);
  const std::size_t interp_at = tabular(c.use_interp, "interp", c.interp_width, &ModelInput::interp);

  Sequence<T> seq;
  seq.batch = B;
  seq.length = c.sequence_length();
  std::vector<std::ptrdiff_t> idx, pos;
  for (std::size_t b = 0; b < B; ++b) {
    idx.push_back(0);
    seq.mask.push_back(1);
    const std::size_t n = frames ? frame_tokens[b].dim(0) : 0;
    for (std::size_t f = 0; f < F; ++f) {
      idx.push_back(f < n ? static_cast<std::ptrdiff_t>(frame_offset[b] + f) : -1);
      seq.mask.push_back(f < n ? 1 : 0);
    }
    if (c.use_ehr) {
      idx.push_back(static_cast<std::ptrdiff_t>(ehr_at + b));
      seq.mask.push_back(1);
    }
    if (c.use_interp) {
      idx.push_back(static_cast<std::ptrdiff_t>(interp_at + b));
      seq.mask.push_back(1);
    }
    for (std::size_t i = 0; i < seq.length; ++i) pos.push_back(static_cast<std::ptrdiff_t>(i));
  }
  const Tensor<T> tokens = diff::gather_rows(diff::concat_rows<T>(pool), idx);
  seq.tokens = diff::add(tokens, diff::gather_rows(params_.get("temporal.pos"), pos));
  return seq;
}

template <typename T>
Tensor<T> Model<T>::temporal_forward(const Sequence<T>& seq) const {
  Tensor<T> z = seq.tokens;
  for (std::size_t l = 0; l < config_.layers; ++l)
    z = transformer_block(z, params_, "temporal.block" + std::to_string(l), seq.batch, seq.length, config_.heads,
                          seq.mask);
  std::vector<std::ptrdiff_t> cls(seq.batch);
  for (std::size_t b = 0; b < seq.batch; ++b) cls[b] = static_cast<std::ptrdiff_t>(b * seq.length);
  Tensor<T> h = diff::gather_rows(z, cls);
  h = diff::layer_norm(h, params_.get("head.ln.g"), params_.get("head.ln.b"));
  h = diff::relu(diff::linear(h, params_.get("head.fc1.w"), params_.get("head.fc1.b")));
  return diff::linear(h, params_.get("head.fc2.w"), params_.get("head.fc2.b"));
}

template <typename T>
Tensor<T> Model<T>::forward(std::span<const ModelInput* const> batch) const {
  const ModelConfig& c = config_;
  std::vector<Tensor<T>> frame_tokens;
  if (c.use_video || c.use_morph) {
    const bool cached = std::all_of(batch.begin(), batch.end(), [](const ModelInput* in) {
      return in->visual_cache.has_value();
    });
    const std::size_t vis_width = c.visual_inputs().size() * c.spatial_dim;
    for (const ModelInput* in : batch) {
      const std::size_t n = in->frames.frames;
      if (n == 0) throw DimensionError("model: sample without frames");
      if (n > c.max_frames)
        throw ConfigError("model: " + std::to_string(n) + " frames exceed the " + std::to_string(c.max_frames) +
                          " frame slots");
      Tensor<T> visual;
      if (cached) {
        const auto& cache = *in->visual_cache;
        if (cache.size() != n * vis_width) throw DimensionError("model: cached visual embedding has the wrong size");
        visual = Tensor<T>::from({n, vis_width}, std::vector<T>(cache.begin(), cache.end()));
      } else {
        visual = encode_visual(in->frames);
      }
      frame_tokens.push_back(fuse_frame_tokens(visual, in->frames));
    }
  }
  return temporal_forward(build_sequence(frame_tokens, batch));
}

template <typename T>
T Model<T>::score(const ModelInput& input) const {
  diff::NoGradGuard guard;
  const ModelInput* one[] = {&input};
  return forward(one).item();
}

template class Model<float>;
template class Model<double>;

}  // namespace mmv::model
