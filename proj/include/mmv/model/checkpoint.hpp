#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "mmv/model/model.hpp"
#include "mmv/model/params.hpp"

namespace mmv::model {

// File layout: 5-byte magic, u32 little-endian header length, JSON header
// {"meta": ..., "params": [{"name", "shape"}...]}, then each parameter as
// little-endian float32 in header order.

inline constexpr const char* kModelMagic = "MMVC1";

struct Checkpoint {
  nlohmann::json meta;
  ParamStore<float> params;
};

void write_checkpoint(const std::filesystem::path& file, const std::string& magic, const nlohmann::json& meta,
                      const ParamStore<float>& params);
/// Throws data::DataError on a bad magic, truncated payload or header.
Checkpoint read_checkpoint(const std::filesystem::path& file, const std::string& magic);

/// meta = {"config": ModelConfig, "extra": extra}.
void save_model(const std::filesystem::path& file, const Model<float>& model, const nlohmann::json& extra = {});

struct LoadedModel {
  Model<float> model;
  nlohmann::json extra;
};
LoadedModel load_model(const std::filesystem::path& file);

}  // namespace mmv::model
