#include "mmv/cli/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "mmv/dataset/io.hpp"

namespace mmv::cli {

namespace {

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::size_t visible(const std::string& s) {
  // Count code points so the plus-minus sign does not shift the columns.
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

std::string pad(const std::string& s, std::size_t width) {
  const std::size_t n = visible(s);
  return s + std::string(width > n ? width - n : 1, ' ');
}

}  // namespace

std::string render_table(const std::vector<TableRow>& rows) {
  std::size_t first = visible("Modality");
  std::size_t cell = visible("AUCROC");
  for (const auto& r : rows) {
    first = std::max(first, visible(r.modality));
    for (const auto& c : r.cells) cell = std::max(cell, visible(c));
  }
  first += 2;
  cell += 2;
  std::string out;
  out += pad("Modality", first) + pad("Embryo", 2 * cell) + "Treatment\n";
  out += pad("", first) + pad("AUCROC", cell) + pad("F-1", cell) + pad("AUCROC", cell) + "F-1\n";
  for (const auto& r : rows) {
    out += pad(r.modality, first);
    for (std::size_t i = 0; i < 4; ++i) out += i + 1 < 4 ? pad(r.cells[i], cell) : r.cells[i];
    out += '\n';
  }
  return out;
}

TableRow table_row(const std::string& modality, const metrics::MetricsReport& r) {
  return {modality, {fixed3(r.embryo.auc), fixed3(r.embryo.f1), fixed3(r.treatment.auc), fixed3(r.treatment.f1)}};
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw data::DataError("cannot write " + file.string());
  out << text;
  if (!out) throw data::DataError("write failed for " + file.string());
}

void write_report(const metrics::MetricsReport& report, const std::string& modality,
                  const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw data::DataError("cannot create " + out_dir.string() + ": " + ec.message());
  write_text(out_dir / "metrics.json", metrics::to_json(report).dump(2) + "\n");

  std::string roc = "scenario,fpr,tpr,threshold\n";
  auto emit = [&](const char* name, const metrics::ScenarioResult& s) {
    for (const auto& p : s.roc)
      roc += std::string(name) + ',' + data::format_real(p.fpr) + ',' + data::format_real(p.tpr) + ',' +
             (std::isinf(p.threshold) ? std::string("inf") : data::format_real(p.threshold)) + '\n';
  };
  emit("embryo", report.embryo);
  emit("treatment", report.treatment);
  write_text(out_dir / "roc.csv", roc);
  write_text(out_dir / "table.txt", render_table({table_row(modality, report)}));
}

MeanSd mean_sd(const std::vector<double>& v) {
  MeanSd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() < 2) return r;
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return r;
}

}  // namespace mmv::cli
