#pragma once

// Minimal CSV tables: header plus string cells. No quoting; cells must not
// contain commas or newlines.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dcrl/core.hpp"

namespace dcrl {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ConfigError("CSV has no column '" + name + "'");
  }
  bool has_column(const std::string& name) const {
    for (const auto& h : header)
      if (h == name) return true;
    return false;
  }
  double number(std::size_t row, const std::string& col) const;
  std::vector<double> numbers(const std::string& col) const {
    std::vector<double> out;
    for (std::size_t r = 0; r < rows.size(); ++r) out.push_back(number(r, col));
    return out;
  }
  void add(std::vector<std::string> row) {
    if (row.size() != header.size()) throw DimensionError("CSV row width does not match header");
    rows.push_back(std::move(row));
  }
  friend bool operator==(const CsvTable&, const CsvTable&) = default;
};

inline std::string csv_number(double x) {
  if (std::isnan(x)) return "nan";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

inline double parse_csv_number(const std::string& s) {
  if (s == "nan" || s == "NaN" || s.empty()) return std::nan("");
  double x = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || end != s.data() + s.size()) throw FormatError("not a number: '" + s + "'");
  return x;
}

inline double CsvTable::number(std::size_t row, const std::string& col) const {
  return parse_csv_number(rows.at(row).at(column(col)));
}

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}
inline std::string join_csv(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "," : "") + cells[i];
  return s;
}
}  // namespace detail

inline std::string to_csv(const CsvTable& t) {
  std::string s = detail::join_csv(t.header) + "\n";
  for (const auto& r : t.rows) s += detail::join_csv(r) + "\n";
  return s;
}

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else if (cells.size() != t.header.size()) {
      throw FormatError("CSV row has " + std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(t.header.size()));
    } else {
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw FormatError("CSV is empty");
  return t;
}

inline void write_csv(const std::string& path, const CsvTable& t) {
  const auto p = std::filesystem::path(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot write '" + path + "'");
  f << to_csv(t);
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_csv(ss.str());
}

}  // namespace dcrl
