#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mmv/dataset/types.hpp"

namespace mmv::data {

// Directory layout:
//   manifest.json     schema_version, ehr_schema, interp_schema, treatments[]
//   <treatment>/ehr.csv               one header row, one data row
//   <treatment>/<embryo>.embv         "EMBV1", u16 T,H,W,C, T*H*W*C u8
//   <treatment>/<embryo>.embm         "EMBM1", u16 T,H,W, u8 K_z, u8 K_s,
//                                     zona/blast/pronuc u8 volumes,
//                                     T float32 frag, T u8 stage
//   <treatment>/<embryo>.interp.csv   header row + one row in interp_schema order
// Multi-byte values are little-endian.

inline constexpr int kSchemaVersion = 1;

/// Reads and validates a dataset directory. Cycles come back in manifest
/// order regardless of how loading is scheduled.
Dataset load_dataset(const std::filesystem::path& root);

/// Writes every file of the layout above; existing files are overwritten.
void write_dataset(const std::filesystem::path& root, const Dataset& dataset);

Video read_video(const std::filesystem::path& file);
void write_video(const std::filesystem::path& file, const Video& video);
MorphFeatures read_morph(const std::filesystem::path& file);
void write_morph(const std::filesystem::path& file, const MorphFeatures& morph);

/// Shortest decimal text that parses back to the identical double.
std::string format_real(double value);
double parse_real(const std::string& text);

std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace mmv::data
