#include "mmv/dataset/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <exception>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"

namespace mmv::data {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr char kVideoMagic[] = "EMBV1";
constexpr char kMorphMagic[] = "EMBM1";
constexpr std::size_t kMagicLen = 5;

std::vector<std::uint8_t> read_bytes(const fs::path& file, const std::string& who) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError(who + ": cannot open " + file.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const fs::path& file, const std::string& who) {
  std::ifstream in(file);
  if (!in) throw DataError(who + ": cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& file, const void* data, std::size_t size) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + file.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw DataError("write failed for " + file.string());
}

class ByteReader {
 public:
  ByteReader(std::vector<std::uint8_t> bytes, std::string who) : bytes_(std::move(bytes)), who_(std::move(who)) {}

  void expect_magic(const char* magic) {
    need(kMagicLen);
    if (std::memcmp(bytes_.data() + pos_, magic, kMagicLen) != 0)
      throw DataError(who_ + ": bad magic, expected " + std::string(magic));
    pos_ += kMagicLen;
  }
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  float f32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 4;
    return std::bit_cast<float>(v);
  }
  std::vector<std::uint8_t> take(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }
  void expect_end() const {
    if (pos_ != bytes_.size()) throw DataError(who_ + ": trailing bytes after payload");
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw DataError(who_ + ": truncated file");
  }
  std::vector<std::uint8_t> bytes_;
  std::string who_;
  std::size_t pos_ = 0;
};

class ByteWriter {
 public:
  void magic(const char* m) { bytes_.insert(bytes_.end(), m, m + kMagicLen); }
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::size_t v) {
    if (v > 0xFFFF) throw DataError("extent " + std::to_string(v) + " does not fit the u16 header field");
    bytes_.push_back(static_cast<std::uint8_t>(v & 0xFF));
    bytes_.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void f32(float f) {
    const auto v = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void raw(const std::vector<std::uint8_t>& data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

std::pair<std::vector<std::string>, std::vector<std::string>> read_csv_row(const fs::path& file,
                                                                          const std::string& who) {
  std::istringstream in(read_text(file, who));
  std::string header, row;
  if (!std::getline(in, header) || !std::getline(in, row)) throw DataError(who + ": " + file.string() + " needs a header and a data row");
  return {split_csv_line(header), split_csv_line(row)};
}

void write_csv_row(const fs::path& file, const std::vector<std::string>& header, const std::vector<std::string>& row) {
  std::string text;
  for (std::size_t i = 0; i < header.size(); ++i) text += (i ? "," : "") + header[i];
  text += '\n';
  for (std::size_t i = 0; i < row.size(); ++i) text += (i ? "," : "") + row[i];
  text += '\n';
  write_file(file, text.data(), text.size());
}

std::vector<std::string> ehr_header(const EhrSchema& schema) {
  std::vector<std::string> header = schema.numeric;
  for (const auto& c : schema.categorical) header.push_back(c.name);
  return header;
}

EhrVector read_ehr(const fs::path& file, const EhrSchema& schema, const std::string& who) {
  auto [header, row] = read_csv_row(file, who);
  if (header != ehr_header(schema)) throw DataError(who + ": EHR columns do not match the declared schema");
  if (row.size() != header.size()) throw DataError(who + ": EHR row has " + std::to_string(row.size()) + " fields");
  EhrVector ehr;
  for (std::size_t i = 0; i < schema.numeric.size(); ++i) {
    try {
      ehr.numeric.push_back(parse_real(row[i]));
    } catch (const std::exception&) {
      throw DataError(who + ": EHR field " + header[i] + " is not a number");
    }
  }
  for (std::size_t i = schema.numeric.size(); i < row.size(); ++i) ehr.categorical.push_back(row[i]);
  return ehr;
}

std::vector<double> read_interp(const fs::path& file, const std::vector<std::string>& schema, const std::string& who) {
  auto [header, row] = read_csv_row(file, who);
  if (header != schema || row.size() != schema.size())
    throw DataError(who + ": interpretable feature columns do not match the declared schema");
  std::vector<double> values;
  for (const auto& cell : row) {
    try {
      values.push_back(parse_real(cell));
    } catch (const std::exception&) {
      throw DataError(who + ": interpretable feature is not a number");
    }
  }
  return values;
}

TreatmentCycle load_cycle(const fs::path& root, const json& entry, const Dataset& header) {
  TreatmentCycle cycle;
  cycle.treatment_id = entry.at("treatment_id").get<std::string>();
  const std::string who = "treatment " + cycle.treatment_id;
  cycle.n_transferred = entry.at("n_transferred").get<int>();
  cycle.n_births = entry.at("n_births").get<int>();
  cycle.ehr = read_ehr(root / entry.at("ehr_file").get<std::string>(), header.ehr_schema, who);
  for (const auto& e : entry.at("embryos")) {
    EmbryoSample embryo;
    embryo.embryo_id = e.at("embryo_id").get<std::string>();
    const std::string ewho = "embryo " + embryo.embryo_id;
    embryo.transferred = e.at("transferred").get<bool>();
    const fs::path video_file = root / e.at("video_file").get<std::string>();
    if (!fs::exists(video_file)) throw DataError(ewho + ": missing video file " + video_file.string());
    try {
      embryo.video = read_video(video_file);
      if (e.contains("morph_file")) embryo.morph = read_morph(root / e.at("morph_file").get<std::string>());
    } catch (const DataError& err) {
      throw DataError(ewho + ": " + err.what());
    }
    if (e.contains("interp_file"))
      embryo.interp = read_interp(root / e.at("interp_file").get<std::string>(), header.interp_schema, ewho);
    cycle.embryos.push_back(std::move(embryo));
  }
  assign_labels(cycle);
  validate(cycle, header.ehr_schema, header.interp_schema.size());
  return cycle;
}

}  // namespace

std::string format_real(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

double parse_real(const std::string& text) {
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw std::invalid_argument("not a number: '" + text + "'");
  return value;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell += ch;
    }
  }
  cells.push_back(cell);
  return cells;
}

Video read_video(const fs::path& file) {
  ByteReader in(read_bytes(file, "video"), file.string());
  in.expect_magic(kVideoMagic);
  Video v;
  v.frames = in.u16();
  v.height = in.u16();
  v.width = in.u16();
  v.channels = in.u16();
  v.pixels = in.take(v.frames * v.height * v.width * v.channels);
  in.expect_end();
  return v;
}

void write_video(const fs::path& file, const Video& video) {
  ByteWriter out;
  out.magic(kVideoMagic);
  out.u16(video.frames);
  out.u16(video.height);
  out.u16(video.width);
  out.u16(video.channels);
  out.raw(video.pixels);
  write_file(file, out.bytes().data(), out.bytes().size());
}

MorphFeatures read_morph(const fs::path& file) {
  ByteReader in(read_bytes(file, "morph"), file.string());
  in.expect_magic(kMorphMagic);
  MorphFeatures m;
  m.frames = in.u16();
  m.height = in.u16();
  m.width = in.u16();
  m.zona_classes = in.u8();
  m.stage_classes = in.u8();
  const std::size_t n = m.frames * m.plane();
  m.zona = in.take(n);
  m.blast = in.take(n);
  m.pronuc = in.take(n);
  for (std::size_t t = 0; t < m.frames; ++t) m.frag.push_back(in.f32());
  m.stage = in.take(m.frames);
  in.expect_end();
  return m;
}

void write_morph(const fs::path& file, const MorphFeatures& m) {
  ByteWriter out;
  out.magic(kMorphMagic);
  out.u16(m.frames);
  out.u16(m.height);
  out.u16(m.width);
  out.u8(m.zona_classes);
  out.u8(m.stage_classes);
  out.raw(m.zona);
  out.raw(m.blast);
  out.raw(m.pronuc);
  for (float f : m.frag) out.f32(f);
  out.raw(m.stage);
  write_file(file, out.bytes().data(), out.bytes().size());
}

Dataset load_dataset(const fs::path& root) {
  const fs::path manifest_path = root / "manifest.json";
  json manifest;
  try {
    manifest = json::parse(read_text(manifest_path, "manifest"));
  } catch (const json::exception& e) {
    throw DataError("manifest: " + std::string(e.what()));
  }

  Dataset header;
  std::vector<json> entries;
  try {
    // An empty manifest ({} or no treatments) is a valid empty dataset.
    if (manifest.value("schema_version", kSchemaVersion) != kSchemaVersion)
      throw DataError("manifest: unsupported schema_version");
    const json ehr = manifest.value("ehr_schema", json::object());
    header.ehr_schema.numeric = ehr.value("numeric", std::vector<std::string>{});
    for (const auto& c : ehr.value("categorical", json::array()))
      header.ehr_schema.categorical.push_back({c.at("name").get<std::string>(), c.at("vocab").get<std::vector<std::string>>()});
    header.interp_schema = manifest.value("interp_schema", std::vector<std::string>{});
    entries = manifest.value("treatments", json::array()).get<std::vector<json>>();
  } catch (const json::exception& e) {
    throw DataError("manifest: " + std::string(e.what()));
  }

  std::vector<TreatmentCycle> cycles(entries.size());
  std::vector<std::exception_ptr> errors(entries.size());
  const long n = static_cast<long>(entries.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    try {
      cycles[static_cast<std::size_t>(i)] = load_cycle(root, entries[static_cast<std::size_t>(i)], header);
    } catch (const json::exception& e) {
      errors[static_cast<std::size_t>(i)] =
          std::make_exception_ptr(DataError("manifest entry " + std::to_string(i) + ": " + e.what()));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);

  header.cycles = std::move(cycles);
  return header;
}

void write_dataset(const fs::path& root, const Dataset& dataset) {
  fs::create_directories(root);
  json manifest;
  manifest["schema_version"] = kSchemaVersion;
  json categorical = json::array();
  for (const auto& c : dataset.ehr_schema.categorical) categorical.push_back({{"name", c.name}, {"vocab", c.vocab}});
  manifest["ehr_schema"] = {{"numeric", dataset.ehr_schema.numeric}, {"categorical", categorical}};
  manifest["interp_schema"] = dataset.interp_schema;
  json treatments = json::array();
  const auto header = ehr_header(dataset.ehr_schema);

  for (const auto& cycle : dataset.cycles) {
    const std::string dir = cycle.treatment_id;
    std::vector<std::string> row;
    for (double x : cycle.ehr.numeric) row.push_back(format_real(x));
    for (const auto& s : cycle.ehr.categorical) row.push_back(s);
    write_csv_row(root / dir / "ehr.csv", header, row);

    json embryos = json::array();
    for (const auto& e : cycle.embryos) {
      json entry{{"embryo_id", e.embryo_id}, {"transferred", e.transferred}};
      entry["video_file"] = dir + "/" + e.embryo_id + ".embv";
      write_video(root / dir / (e.embryo_id + ".embv"), e.video);
      if (e.morph) {
        entry["morph_file"] = dir + "/" + e.embryo_id + ".embm";
        write_morph(root / dir / (e.embryo_id + ".embm"), *e.morph);
      }
      if (e.interp) {
        entry["interp_file"] = dir + "/" + e.embryo_id + ".interp.csv";
        std::vector<std::string> cells;
        for (double x : *e.interp) cells.push_back(format_real(x));
        write_csv_row(root / dir / (e.embryo_id + ".interp.csv"), dataset.interp_schema, cells);
      }
      embryos.push_back(std::move(entry));
    }
    treatments.push_back({{"treatment_id", cycle.treatment_id},
                          {"ehr_file", dir + "/ehr.csv"},
                          {"n_transferred", cycle.n_transferred},
                          {"n_births", cycle.n_births},
                          {"embryos", embryos}});
  }
  manifest["treatments"] = treatments;
  const std::string text = manifest.dump(2) + "\n";
  write_file(root / "manifest.json", text.data(), text.size());
}

}  // namespace mmv::data
