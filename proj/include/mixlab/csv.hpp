#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "mixlab/common.hpp"
#include "mixlab/numeric.hpp"

namespace mixlab {

/// CSV writer with a fixed header schema. Floating point fields are written
/// with 17 significant digits so outputs round-trip exactly.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, std::vector<std::string> columns);
  ~CsvWriter();

  void row(const std::vector<double>& values);
  /// Row with a leading string cell (e.g. symbolic words) and numeric rest.
  void row(const std::string& head, const std::vector<double>& values);
  void close();
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream out_;
  std::size_t ncols_;
};

/// Parsed CSV (numeric cells; first column may be text).
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;      // numeric cells (NaN where text)
  std::vector<std::string> first_cell_text;   // raw first cell per row
};

CsvTable read_csv(const std::string& path);

/// FNV-1a checksum of a file's bytes (hex string).
std::string file_checksum(const std::string& path);

}  // namespace mixlab
