#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "mmv/metrics/metrics.hpp"

namespace mmv::cli {

/// One table row: a modality and the four cells Embryo AUCROC, Embryo F-1,
/// Treatment AUCROC, Treatment F-1.
struct TableRow {
  std::string modality;
  std::array<std::string, 4> cells;
};

std::string render_table(const std::vector<TableRow>& rows);
TableRow table_row(const std::string& modality, const metrics::MetricsReport& report);

/// metrics.json, roc.csv (scenario, fpr, tpr, threshold) and table.txt.
/// Throws DataError on I/O failure.
void write_report(const metrics::MetricsReport& report, const std::string& modality,
                  const std::filesystem::path& out_dir);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation, 0 for a single value
};
MeanSd mean_sd(const std::vector<double>& values);

/// Writes `text` to `file`, replacing it. Throws DataError.
void write_text(const std::filesystem::path& file, const std::string& text);

}  // namespace mmv::cli
