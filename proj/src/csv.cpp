#include "mixlab/csv.hpp"

#include <cstdio>
#include <sstream>

namespace mixlab {

CsvWriter::CsvWriter(const std::string& path, std::vector<std::string> columns)
    : path_(path), out_(path, std::ios::binary), ncols_(columns.size()) {
  if (!out_) throw Error(errc::bad_params, "cannot open " + path);
  for (std::size_t i = 0; i < columns.size(); ++i)
    out_ << columns[i] << (i + 1 < columns.size() ? "," : "\n");
}

CsvWriter::~CsvWriter() { close(); }

void CsvWriter::row(const std::vector<double>& values) {
  if (values.size() != ncols_) throw Error(errc::bad_params, "row arity in " + path_);
  for (std::size_t i = 0; i < values.size(); ++i)
    out_ << format_g17(values[i]) << (i + 1 < values.size() ? "," : "\n");
}

void CsvWriter::row(const std::string& head, const std::vector<double>& values) {
  if (values.size() + 1 != ncols_) throw Error(errc::bad_params, "row arity in " + path_);
  out_ << head;
  for (const double& v : values) out_ << ',' << format_g17(v);
  out_ << '\n';
}

void CsvWriter::close() {
  if (out_.is_open()) {
    out_.flush();
    out_.close();
  }
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(errc::bad_params, "cannot read " + path);
  CsvTable t;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (header) {
      t.columns = cells;
      header = false;
      continue;
    }
    std::vector<double> row;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      try {
        row.push_back(std::stod(cells[i]));
      } catch (...) {
        row.push_back(std::numeric_limits<double>::quiet_NaN());
      }
    }
    t.first_cell_text.push_back(cells.empty() ? "" : cells[0]);
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::string file_checksum(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(errc::bad_params, "cannot read " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)fnv1a64(bytes));
  return buf;
}

}  // namespace mixlab
