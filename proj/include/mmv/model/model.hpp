#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmv/dataset/types.hpp"
#include "mmv/diffcore/tensor.hpp"
#include "mmv/model/params.hpp"

namespace mmv::model {

/// Visual inputs encoded frame by frame by the spatial transformer.
enum class Visual : std::uint8_t { kVideo = 0, kZona = 1, kBlast = 2, kPronuc = 3 };
inline constexpr std::array<Visual, 4> kAllVisual = {Visual::kVideo, Visual::kZona, Visual::kBlast, Visual::kPronuc};
const char* visual_name(Visual v);

struct ModelConfig {
  std::size_t frame_size = 32;  // H = W
  std::size_t patch = 8;        // h = w
  std::size_t spatial_dim = 16;
  std::size_t spatial_layers = 1;
  std::size_t spatial_heads = 2;
  std::size_t spatial_hidden = 0;  // 0: 4 * spatial_dim
  std::size_t dim = 32;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t hidden = 0;       // 0: 4 * dim
  std::size_t head_hidden = 0;  // 0: dim
  std::size_t rc_dim = 0;       // width of the fragmentation/stage embedding; 0: spatial_dim
  bool use_video = true;
  bool use_morph = true;  // zona, blastomere and pronucleus masks plus fragmentation and stage
  bool use_ehr = true;
  bool use_interp = true;
  std::size_t zona_classes = 3;
  std::size_t stage_classes = 9;
  std::size_t ehr_width = 0;     // normalized EHR vector width
  std::size_t interp_width = 0;  // normalized interpretable vector width
  std::size_t max_frames = 90;   // F, frame slots after subsampling
  bool freeze_spatial = false;
  bool share_spatial = true;     // one spatial trunk for all visual inputs
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;

  std::size_t patches() const { return (frame_size / patch) * (frame_size / patch); }
  std::size_t channels(Visual v) const;
  std::vector<Visual> visual_inputs() const;
  std::size_t spatial_mlp() const { return spatial_hidden ? spatial_hidden : 4 * spatial_dim; }
  std::size_t mlp() const { return hidden ? hidden : 4 * dim; }
  std::size_t head_width() const { return head_hidden ? head_hidden : dim; }
  std::size_t rc_width() const { return rc_dim ? rc_dim : spatial_dim; }
  /// Width of the concatenated frame token before the fusion projection.
  std::size_t fused_width() const;
  /// 1 + F + [EHR token] + [interpretable token].
  std::size_t sequence_length() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

/// Closed-form scalar parameter count.
std::size_t parameter_count(const ModelConfig& config);

/// Model-ready frames of one embryo (already subsampled), channels last.
struct FrameStack {
  std::size_t frames = 0;
  std::vector<float> video;   // frames*H*W, [0,1]
  std::vector<float> zona;    // frames*H*W*K_z one-hot
  std::vector<float> blast;   // frames*H*W*2: occupancy, boundary
  std::vector<float> pronuc;  // frames*H*W*2
  std::vector<float> frag;    // frames
  std::vector<std::uint8_t> stage;  // frames

  const std::vector<float>& of(Visual v) const;
};

struct ModelInput {
  FrameStack frames;
  /// Per-frame spatial embeddings [frames, n_visual*d] from a frozen encoder.
  std::optional<std::vector<float>> visual_cache;
  std::vector<double> ehr;     // normalized
  std::vector<double> interp;  // normalized
};

/// Occupancy and 4-neighbour boundary channels of an instance mask plane.
void rasterize_instances(const std::uint8_t* ids, std::size_t side, float* out);

/// Builds the model input from a subsampled embryo; mask channels are only
/// filled when the config uses them. Throws DataError when a required
/// modality is missing.
ModelInput prepare_input(const data::EmbryoSample& sample, const ModelConfig& config, std::vector<double> ehr,
                         std::vector<double> interp);

/// The multimodal token sequence of a batch before the temporal blocks.
template <typename T>
struct Sequence {
  diff::Tensor<T> tokens;          // [batch*length, D], positional embedding added
  std::vector<std::uint8_t> mask;  // batch*length, 0 on padded frame slots
  std::size_t batch = 0;
  std::size_t length = 0;
};

/// Anything the trainer can fit: a batch of inputs to [batch, 1] scores.
template <typename T>
class Regressor {
 public:
  virtual ~Regressor() = default;
  virtual diff::Tensor<T> forward(std::span<const ModelInput* const> batch) const = 0;
  virtual const ParamStore<T>& params() const = 0;
  virtual ParamStore<T>& params() = 0;
};

template <typename T>
class Model final : public Regressor<T> {
 public:
  explicit Model(ModelConfig config);
  Model(ModelConfig config, ParamStore<T> params);

  const ModelConfig& config() const { return config_; }
  const ParamStore<T>& params() const override { return params_; }
  ParamStore<T>& params() override { return params_; }

  /// Patch tokens with class token and positional embedding for every frame
  /// of `frames` (frames*H*W*C, channels last): [n*(N+1), d].
  diff::Tensor<T> patch_embed(std::span<const float> frames, std::size_t n, Visual v) const;
  /// Final class token of every frame: [n, d].
  diff::Tensor<T> spatial_encode(std::span<const float> frames, std::size_t n, Visual v) const;
  /// Concatenated spatial embeddings of all enabled visual inputs: [n, n_visual*d].
  diff::Tensor<T> encode_visual(const FrameStack& frames) const;
  /// Frame tokens [n, D] from the visual embeddings and the scalar channels.
  diff::Tensor<T> fuse_frame_tokens(const diff::Tensor<T>& visual, const FrameStack& frames) const;

  /// Class token, frame slots padded to F, optional tabular tokens, plus the
  /// positional embedding. `frame_tokens[b]` is [n_b, D].
  Sequence<T> build_sequence(std::span<const diff::Tensor<T>> frame_tokens,
                             std::span<const ModelInput* const> inputs) const;
  /// Temporal blocks and regression head: [batch, 1].
  diff::Tensor<T> temporal_forward(const Sequence<T>& sequence) const;

  /// Full forward pass over a batch: [batch, 1] unbounded scores.
  diff::Tensor<T> forward(std::span<const ModelInput* const> batch) const override;
  T score(const ModelInput& input) const;

 private:
  std::string trunk(Visual v) const;
  void check_params() const;

  ModelConfig config_;
  ParamStore<T> params_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace mmv::model
