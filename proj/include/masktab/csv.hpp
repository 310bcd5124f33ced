#pragma once

// Minimal CSV for the interchange formats: comma separated, no quoting,
// '.' decimal separator, "NA" for missing numbers.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "masktab/error.hpp"
#include "masktab/hash.hpp"

namespace masktab::csv {

inline constexpr std::string_view kMissing = "NA";

/// Shortest text that reads back to the identical double (17 significant digits).
inline std::string format_number(double v) {
  if (std::isnan(v)) return std::string(kMissing);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    cells.emplace_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline bool is_missing(std::string_view cell) { return cell.empty() || cell == kMissing; }

/// Parses a number; "NA" and empty cells become NaN.
inline double parse_number(std::string_view cell) {
  if (is_missing(cell)) return std::numeric_limits<double>::quiet_NaN();
  std::string s(cell);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw DataError("not a number: '" + s + "'");
  return v;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column_index(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw DataError("missing column '" + std::string(name) + "'");
  }
};

inline Table parse(std::string_view text, const std::string& source = "csv") {
  Table t;
  std::size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = nl + 1;
    if (line.empty()) continue;
    auto cells = split_line(line);
    for (auto& c : cells) c = trim(c);
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size())
        throw DataError(source + ": row " + std::to_string(t.rows.size() + 1) + " has " +
                        std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(t.header.size()));
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw DataError(source + ": empty file");
  return t;
}

inline Table read(const std::filesystem::path& path) {
  return parse(read_file(path), path.string());
}

inline std::string to_string(const Table& t) {
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      // No quoting: every value this library writes is a number, a label or NA.
      if (cells[i].find_first_of(",\n\r\"") != std::string::npos)
        throw DataError("csv: cell '" + cells[i] + "' needs quoting, which is not supported");
      if (i) out << ',';
      out << cells[i];
    }
    out << '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
  return out.str();
}

inline void write(const std::filesystem::path& path, const Table& t) {
  write_file(path, to_string(t));
}

}  // namespace masktab::csv
