#include "mmv/cli/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "mmv/dataset/io.hpp"
#include "mmv/dataset/types.hpp"

namespace mmv::cli {

std::string Modality::str() const {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += '+';
    s += name;
  };
  add(video, "v");
  add(morph, "v'");
  add(ehr, "e");
  add(interp, "e'");
  return s;
}

Modality parse_modality(const std::string& text) {
  std::string t;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text.compare(i, 3, "\xE2\x80\xB2") == 0) {
      t += '\'';
      i += 2;
    } else if (text[i] != ' ') {
      t += text[i];
    }
  }
  static const std::vector<std::pair<std::string, Modality>> allowed = {
      {"v", {true, false, false, false}},     {"v+e", {true, false, true, false}},
      {"v+v'", {true, true, false, false}},   {"v+v'+e+e'", {true, true, true, true}},
      {"v'", {false, true, false, false}},    {"v'+e+e'", {false, true, true, true}},
      {"e", {false, false, true, false}},     {"e+e'", {false, false, true, true}},
      {"e'", {false, false, false, true}},
  };
  for (const auto& [name, m] : allowed)
    if (name == t) return m;
  throw ConfigError("unknown modality '" + text + "'; expected one of v, v+e, v+v', v+v'+e+e', v', v'+e+e', e, e+e', e'");
}

void RunConfig::validate() const {
  synth.validate();
  train.validate();
  (void)selector();
  if (eval_split != "val" && eval_split != "test") throw ConfigError("run.eval_split must be val or test");
  if (data_dir.empty()) throw ConfigError("paths.data must be set");
}

namespace {

struct Field {
  std::string key;
  std::function<void(const YAML::Node&)> read;
  std::function<void(YAML::Emitter&)> write;
};

template <typename T>
T scalar(const YAML::Node& n, const std::string& key) {
  if (!n.IsScalar()) throw ConfigError(key + ": expected a scalar");
  try {
    if constexpr (std::is_same_v<T, bool> || std::is_floating_point_v<T> || std::is_same_v<T, std::string>) {
      return n.as<T>();
    } else {
      static_assert(std::is_integral_v<T>);
      const auto text = n.as<std::string>();
      if (!text.empty() && text[0] == '-') throw ConfigError(key + ": must be non-negative");
      const auto v = n.as<std::uint64_t>();
      if (v > std::numeric_limits<T>::max()) throw ConfigError(key + ": value " + text + " out of range");
      return static_cast<T>(v);
    }
  } catch (const YAML::Exception&) {
    throw ConfigError(key + ": cannot parse '" + n.as<std::string>() + "'");
  }
}

template <typename T>
Field field(const std::string& key, T& ref) {
  return {key, [&ref, key](const YAML::Node& n) { ref = scalar<T>(n, key); },
          [&ref, key](YAML::Emitter& e) {
            e << YAML::Key << key << YAML::Value;
            if constexpr (std::is_same_v<T, std::uint8_t>)
              e << static_cast<unsigned>(ref);
            else if constexpr (std::is_floating_point_v<T>)
              e << data::format_real(ref);
            else
              e << ref;
          }};
}

Field path_field(const std::string& key, std::filesystem::path& ref, const std::filesystem::path& base) {
  return {key,
          [&ref, key, base](const YAML::Node& n) {
            std::filesystem::path p = scalar<std::string>(n, key);
            ref = (p.is_relative() && !base.empty()) ? base / p : p;
          },
          [&ref, key](YAML::Emitter& e) { e << YAML::Key << key << YAML::Value << ref.string(); }};
}

using Sections = std::vector<std::pair<std::string, std::vector<Field>>>;

Sections sections(RunConfig& c, const std::filesystem::path& base) {
  auto& s = c.synth;
  auto& m = c.model;
  auto& t = c.tabular;
  auto& r = c.train;
  return {
      {"synth",
       {field("n_treatments", s.n_treatments), field("min_embryos", s.min_embryos),
        field("max_embryos", s.max_embryos), field("frames", s.frames), field("frame_size", s.frame_size),
        field("success_rate", s.success_rate), field("w_video", s.w_video), field("w_ehr", s.w_ehr),
        field("w_morph", s.w_morph), field("signal_strength", s.signal_strength),
        field("pixel_noise", s.pixel_noise), field("interp_noise", s.interp_noise),
        field("selection_noise", s.selection_noise), field("sibling_correlation", s.sibling_correlation),
        field("zona_width", s.zona_width),
        field("stage_classes", s.stage_classes), field("seed", s.seed)}},
      {"model",
       {field("patch", m.patch), field("spatial_dim", m.spatial_dim), field("spatial_layers", m.spatial_layers),
        field("spatial_heads", m.spatial_heads), field("spatial_hidden", m.spatial_hidden), field("dim", m.dim),
        field("layers", m.layers), field("heads", m.heads), field("hidden", m.hidden),
        field("head_hidden", m.head_hidden), field("rc_dim", m.rc_dim), field("max_frames", m.max_frames),
        field("freeze_spatial", m.freeze_spatial), field("share_spatial", m.share_spatial)}},
      {"tabular",
       {field("dim", t.dim), field("layers", t.layers), field("heads", t.heads), field("hidden", t.hidden)}},
      {"train",
       {field("batch_size", r.batch_size), field("learning_rate", r.learning_rate),
        field("huber_delta", r.huber_delta), field("beta1", r.beta1), field("beta2", r.beta2),
        field("adam_eps", r.adam_eps), field("max_epochs", r.max_epochs), field("patience", r.patience),
        field("min_delta", r.min_delta), field("augment", r.augment)}},
      {"paths", {path_field("data", c.data_dir, base), path_field("out", c.out_dir, base)}},
      {"run",
       {field("modality", c.modality), field("seed", c.seed), field("split_seed", c.split_seed),
        field("eval_split", c.eval_split)}},
  };
}

}  // namespace

RunConfig parse_run_config(const std::string& yaml, const std::filesystem::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig c;
  if (root.IsNull()) {
    c.validate();
    return c;
  }
  if (!root.IsMap()) throw ConfigError("config: top level must be a mapping of sections");
  auto secs = sections(c, base_dir);
  for (const auto& kv : root) {
    const auto name = kv.first.as<std::string>();
    auto sec = std::find_if(secs.begin(), secs.end(), [&](const auto& p) { return p.first == name; });
    if (sec == secs.end()) throw ConfigError("config: unknown section '" + name + "'");
    if (kv.second.IsNull()) continue;
    if (!kv.second.IsMap()) throw ConfigError("config: section '" + name + "' must be a mapping");
    for (const auto& item : kv.second) {
      const auto key = item.first.as<std::string>();
      auto f = std::find_if(sec->second.begin(), sec->second.end(), [&](const Field& x) { return x.key == key; });
      if (f == sec->second.end()) throw ConfigError("config: unknown key '" + name + "." + key + "'");
      f->read(item.second);
    }
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw data::DataError("cannot read config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), file.parent_path());
}

std::string to_yaml(const RunConfig& config) {
  RunConfig copy = config;
  YAML::Emitter e;
  e << YAML::BeginMap;
  for (const auto& [name, fields] : sections(copy, {})) {
    e << YAML::Key << name << YAML::Value << YAML::BeginMap;
    for (const auto& f : fields) f.write(e);
    e << YAML::EndMap;
  }
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

}  // namespace mmv::cli
