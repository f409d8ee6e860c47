#pragma once

// CSV emission with a fixed schema. The header row is written even for an
// empty table and reals use 9 significant digits ("%.9g"). Every column is
// numeric or a bare identifier, so nothing is ever quoted.

#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "repsim/error.hpp"

namespace repsim {

using CsvField = std::variant<double, std::int64_t, std::string>;

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {
    if (header_.empty()) fail(ErrorKind::config, "CSV header must not be empty");
  }

  void add(std::vector<CsvField> row) {
    if (row.size() != header_.size()) {
      fail(ErrorKind::dimension, "CSV row has " + std::to_string(row.size()) + " fields, header has " +
                                     std::to_string(header_.size()));
    }
    rows_.push_back(std::move(row));
  }

  std::size_t size() const noexcept { return rows_.size(); }
  const std::vector<std::string>& header() const noexcept { return header_; }

  std::string str() const {
    std::string out;
    append_line(out, header_);
    std::vector<std::string> cells;
    for (const auto& row : rows_) {
      cells.clear();
      for (const auto& f : row) {
        if (const auto* d = std::get_if<double>(&f)) {
          cells.push_back(format_real(*d));
        } else if (const auto* i = std::get_if<std::int64_t>(&f)) {
          cells.push_back(std::to_string(*i));
        } else {
          cells.push_back(std::get<std::string>(f));
        }
      }
      append_line(out, cells);
    }
    return out;
  }

 private:
  static void append_line(std::string& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out.push_back(',');
      out += cells[i];
    }
    out.push_back('\n');
  }

  std::vector<std::string> header_;
  std::vector<std::vector<CsvField>> rows_;
};

}  // namespace repsim
