#include "mmv/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mmv/dataset/types.hpp"

namespace mmv::model {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void write_checkpoint(const std::filesystem::path& file, const std::string& magic, const nlohmann::json& meta,
                      const ParamStore<float>& params) {
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i)
    entries.push_back({{"name", params.names()[i]}, {"shape", params.tensors()[i].shape()}});
  const std::string header = nlohmann::json{{"meta", meta}, {"params", entries}}.dump();
  const auto length = static_cast<std::uint32_t>(header.size());

  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw data::DataError("cannot write checkpoint " + file.string());
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  out.write(reinterpret_cast<const char*>(&length), sizeof length);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& t : params.tensors())
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!out) throw data::DataError("write failed for checkpoint " + file.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& file, const std::string& magic) {
  const std::string who = "checkpoint " + file.string();
  std::ifstream in(file, std::ios::binary);
  if (!in) throw data::DataError(who + ": cannot open");
  const std::vector<char> bytes{std::istreambuf_iterator<char>(in), {}};
  std::size_t pos = 0;
  auto take = [&](std::size_t n) {
    if (pos + n > bytes.size()) throw data::DataError(who + ": truncated file");
    const char* p = bytes.data() + pos;
    pos += n;
    return p;
  };
  if (std::string(take(magic.size()), magic.size()) != magic)
    throw data::DataError(who + ": bad magic, expected " + magic);
  std::uint32_t length = 0;
  std::memcpy(&length, take(sizeof length), sizeof length);
  const char* header_text = take(length);

  Checkpoint ck;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text, header_text + length);
    ck.meta = header.at("meta");
    for (const auto& entry : header.at("params")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      std::vector<float> values(shape_numel(shape));
      std::memcpy(values.data(), take(values.size() * sizeof(float)), values.size() * sizeof(float));
      ck.params.adopt(name, diff::Tensor<float>::from(shape, std::move(values), true));
    }
  } catch (const nlohmann::json::exception& e) {
    throw data::DataError(who + ": malformed header: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw data::DataError(who + ": " + e.what());
  }
  if (pos != bytes.size()) throw data::DataError(who + ": trailing bytes after the last parameter");
  return ck;
}

void save_model(const std::filesystem::path& file, const Model<float>& model, const nlohmann::json& extra) {
  write_checkpoint(file, kModelMagic, {{"config", model.config().to_json()}, {"extra", extra}}, model.params());
}

LoadedModel load_model(const std::filesystem::path& file) {
  Checkpoint ck = read_checkpoint(file, kModelMagic);
  ModelConfig config;
  try {
    config = ModelConfig::from_json(ck.meta.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw data::DataError("checkpoint " + file.string() + ": bad config: " + e.what());
  }
  return {Model<float>(config, std::move(ck.params)), ck.meta.value("extra", nlohmann::json::object())};
}

}  // namespace mmv::model
