#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ha/model.hpp"

namespace ha {

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Splits one CSV record; supports double-quoted fields with "" escapes.
std::vector<std::string> split_csv_line(const std::string& line);

/// key=value lines, '#' comments, surrounding whitespace trimmed.
/// Later keys override earlier ones.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::filesystem::path& path);

std::vector<std::string> split_list(const std::string& s, char sep = ',');
std::string trim(const std::string& s);

/// Shortest round-trip decimal for a double.
std::string format_double(double x);

/// Writes to a sibling temporary file, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

/// FNV-1a 64-bit hash, hex encoded.
std::string fnv1a_hex(const std::string& s);

struct CsvSchema {
  std::vector<std::string> factor_columns;
  std::vector<std::string> response_columns;
  /// Optional declared level labels per factor (same order as factor_columns).
  /// Undeclared factors take their levels from the data, sorted.
  std::map<std::string, std::vector<std::string>> levels;
  /// Allow values outside a declared level list (appended in order seen).
  bool extend_levels = false;
};

CellStats ingest_long_csv(const std::filesystem::path& path, const CsvSchema& schema);

/// Raw observations kept alongside the cell statistics (MANOVA preprocessing
/// and Pillai tests need individual rows).
struct LongData {
  Layout layout;
  std::vector<std::vector<std::size_t>> cells;  // per row, factor level indices
  std::vector<std::vector<double>> responses;   // per row, p values
};

LongData read_long_csv(const std::filesystem::path& path, const CsvSchema& schema);
CellStats to_cell_stats(const LongData& data);

}  // namespace ha
