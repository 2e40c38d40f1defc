#include "mmv/tabular/tabular.hpp"

#include "mmv/diffcore/ops.hpp"
#include "mmv/model/checkpoint.hpp"
#include "mmv/model/transformer.hpp"

namespace mmv::tabular {

using diff::Tensor;
using model::Init;
using model::ModelInput;

namespace {

std::size_t layout_width(const std::vector<data::FeatureSlot>& layout) {
  std::size_t w = 0;
  for (const auto& s : layout) w += s.width;
  return w;
}

nlohmann::json layout_json(const std::vector<data::FeatureSlot>& layout) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& s : layout)
    a.push_back({{"name", s.name}, {"offset", s.offset}, {"width", s.width}, {"categorical", s.categorical}});
  return a;
}

std::vector<data::FeatureSlot> layout_from(const nlohmann::json& a) {
  std::vector<data::FeatureSlot> out;
  for (const auto& j : a)
    out.push_back({j.at("name").get<std::string>(), j.at("offset").get<std::size_t>(),
                   j.at("width").get<std::size_t>(), j.at("categorical").get<bool>()});
  return out;
}

struct Source {
  const char* prefix;
  const std::vector<data::FeatureSlot>* layout;
  std::vector<double> ModelInput::*member;
};

std::vector<Source> sources(const TabularConfig& c) {
  std::vector<Source> out;
  if (c.use_ehr) out.push_back({"ehr", &c.ehr_layout, &ModelInput::ehr});
  if (c.use_interp) out.push_back({"interp", &c.interp_layout, &ModelInput::interp});
  return out;
}

std::string feature_param(const Source& s, const data::FeatureSlot& slot) {
  return std::string("feature.") + s.prefix + "." + slot.name;
}

}  // namespace

void TabularConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("tabular: " + what);
  };
  need(use_ehr || use_interp, "at least one of use_ehr / use_interp must be on");
  need(dim > 0 && heads > 0 && dim % heads == 0, "dim must be divisible by heads");
  for (const auto& src : sources(*this)) {
    need(!src.layout->empty(), std::string(src.prefix) + " feature layout is empty");
    std::size_t offset = 0;
    for (const auto& s : *src.layout) {
      need(s.offset == offset && s.width >= 1 && (s.categorical || s.width == 1),
           std::string(src.prefix) + " feature layout is not contiguous at " + s.name);
      offset += s.width;
    }
  }
}

std::size_t TabularConfig::feature_count() const {
  std::size_t n = 0;
  for (const auto& src : sources(*this)) n += src.layout->size();
  return n;
}

nlohmann::json TabularConfig::to_json() const {
  return {{"dim", dim},
          {"layers", layers},
          {"heads", heads},
          {"hidden", hidden},
          {"use_ehr", use_ehr},
          {"use_interp", use_interp},
          {"ehr_layout", layout_json(ehr_layout)},
          {"interp_layout", layout_json(interp_layout)},
          {"seed", seed}};
}

TabularConfig TabularConfig::from_json(const nlohmann::json& j) {
  TabularConfig c;
  j.at("dim").get_to(c.dim);
  j.at("layers").get_to(c.layers);
  j.at("heads").get_to(c.heads);
  j.at("hidden").get_to(c.hidden);
  j.at("use_ehr").get_to(c.use_ehr);
  j.at("use_interp").get_to(c.use_interp);
  c.ehr_layout = layout_from(j.at("ehr_layout"));
  c.interp_layout = layout_from(j.at("interp_layout"));
  j.at("seed").get_to(c.seed);
  c.validate();
  return c;
}

std::size_t parameter_count(const TabularConfig& c) {
  std::size_t n = c.dim;  // class token
  for (const auto& src : sources(c))
    for (const auto& s : *src.layout) n += s.categorical ? s.width * c.dim : 2 * c.dim;
  n += c.layers * model::block_param_count(c.dim, c.mlp());
  n += 2 * c.dim + c.dim + 1;
  return n;
}

template <typename T>
TabularModel<T>::TabularModel(TabularConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  auto& p = params_;
  const std::size_t D = config_.dim;
  p.create("cls", {1, D}, Init::kNormal, rng);
  for (const auto& src : sources(config_))
    for (const auto& s : *src.layout) {
      const std::string name = feature_param(src, s);
      if (s.categorical) {
        p.create(name + ".table", {s.width, D}, Init::kNormal, rng);
      } else {
        p.create(name + ".w", {1, D}, Init::kNormal, rng);
        p.create(name + ".b", {D}, Init::kNormal, rng);
      }
    }
  for (std::size_t l = 0; l < config_.layers; ++l)
    model::add_block_params(p, "block" + std::to_string(l), D, config_.mlp(), rng);
  p.create("head.ln.g", {D}, Init::kOnes, rng);
  p.create("head.ln.b", {D}, Init::kZeros, rng);
  p.create("head.w", {D, 1}, Init::kNormal, rng);
  p.create("head.b", {1}, Init::kZeros, rng);
}

template <typename T>
TabularModel<T>::TabularModel(TabularConfig config, model::ParamStore<T> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const TabularModel<T> reference(config_);
  if (reference.params().names() != params_.names())
    throw ConfigError("tabular: parameter names do not match the config");
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (reference.params().tensors()[i].shape() != params_.tensors()[i].shape())
      throw ConfigError("tabular: parameter " + params_.names()[i] + " has the wrong shape");
}

template <typename T>
Tensor<T> TabularModel<T>::tokenize(std::span<const ModelInput* const> batch) const {
  const std::size_t B = batch.size(), n = config_.feature_count();
  if (B == 0) throw DimensionError("tabular: empty batch");
  std::vector<Tensor<T>> pool = {params_.get("cls")};
  for (const auto& src : sources(config_)) {
    const std::size_t width = layout_width(*src.layout);
    for (const ModelInput* in : batch)
      if ((in->*src.member).size() != width)
        throw DimensionError(std::string("tabular: ") + src.prefix + " vector has width " +
                             std::to_string((in->*src.member).size()) + ", schema declares " + std::to_string(width));
    for (const auto& s : *src.layout) {
      std::vector<T> cols(B * s.width);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < s.width; ++k) cols[b * s.width + k] = static_cast<T>((batch[b]->*src.member)[s.offset + k]);
      const Tensor<T> x = Tensor<T>::from({B, s.width}, std::move(cols));
      const std::string name = feature_param(src, s);
      // A categorical one-hot times its table is the lookup of that row.
      pool.push_back(s.categorical ? diff::linear(x, params_.get(name + ".table"), Tensor<T>())
                                   : diff::linear(x, params_.get(name + ".w"), params_.get(name + ".b")));
    }
  }
  std::vector<std::ptrdiff_t> idx;
  for (std::size_t b = 0; b < B; ++b) {
    idx.push_back(0);
    for (std::size_t f = 0; f < n; ++f) idx.push_back(static_cast<std::ptrdiff_t>(1 + f * B + b));
  }
  return diff::gather_rows(diff::concat_rows<T>(pool), idx);
}

template <typename T>
Tensor<T> TabularModel<T>::forward(std::span<const ModelInput* const> batch) const {
  const std::size_t B = batch.size(), S = config_.sequence_length();
  Tensor<T> z = tokenize(batch);
  for (std::size_t l = 0; l < config_.layers; ++l)
    z = model::transformer_block(z, params_, "block" + std::to_string(l), B, S, config_.heads);
  std::vector<std::ptrdiff_t> cls(B);
  for (std::size_t b = 0; b < B; ++b) cls[b] = static_cast<std::ptrdiff_t>(b * S);
  const Tensor<T> h = diff::layer_norm(diff::gather_rows(z, cls), params_.get("head.ln.g"), params_.get("head.ln.b"));
  return diff::linear(h, params_.get("head.w"), params_.get("head.b"));
}

template <typename T>
T TabularModel<T>::score(const ModelInput& input) const {
  diff::NoGradGuard guard;
  const ModelInput* one[] = {&input};
  return forward(one).item();
}

template class TabularModel<float>;
template class TabularModel<double>;

void save_tabular(const std::filesystem::path& file, const TabularModel<float>& m, const nlohmann::json& extra) {
  model::write_checkpoint(file, kTabularMagic, {{"config", m.config().to_json()}, {"extra", extra}}, m.params());
}

LoadedTabular load_tabular(const std::filesystem::path& file) {
  model::Checkpoint ck = model::read_checkpoint(file, kTabularMagic);
  TabularConfig config;
  try {
    config = TabularConfig::from_json(ck.meta.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw data::DataError("checkpoint " + file.string() + ": bad config: " + e.what());
  }
  return {TabularModel<float>(config, std::move(ck.params)), ck.meta.value("extra", nlohmann::json::object())};
}

}  // namespace mmv::tabular
