#pragma once

// Raw (pre-encoding) table exchanged between the generator and preprocessing.
//
// Directory layout:
//   predictors.csv      one column per raw predictor, text cells, NA = missing
//   concentrations.csv  ug/kg per response; number, "<LOQ", or NA (not measured)
//   sites.csv           location_id,year per row
//   raw_schema.json     column types and response names

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "masktab/csv.hpp"
#include "masktab/error.hpp"
#include "masktab/matrix.hpp"

namespace masktab {

enum class RawColumnType { continuous, categorical, day_of_year, ph, weather_lag };

inline const char* to_string(RawColumnType t) {
  switch (t) {
    case RawColumnType::continuous: return "continuous";
    case RawColumnType::categorical: return "categorical";
    case RawColumnType::day_of_year: return "day_of_year";
    case RawColumnType::ph: return "ph";
    case RawColumnType::weather_lag: return "weather_lag";
  }
  return "?";
}

inline RawColumnType raw_column_type_from_string(const std::string& s) {
  for (auto t : {RawColumnType::continuous, RawColumnType::categorical, RawColumnType::day_of_year,
                 RawColumnType::ph, RawColumnType::weather_lag})
    if (s == to_string(t)) return t;
  throw DataError("unknown raw column type '" + s + "'");
}

struct RawColumn {
  std::string name;
  RawColumnType type = RawColumnType::continuous;
  std::string weather_variable;  // weather_lag only: precipitation, temperature, dewpoint
  int lag = 0;                   // weather_lag only: days before harvest, 1-based
  std::vector<std::string> values;
};

inline constexpr std::string_view kBelowLoq = "<LOQ";

struct RawTable {
  std::vector<RawColumn> predictors;
  std::vector<std::string> response_names;
  Matrix concentration;  // N x K ug/kg, NaN = not measured
  Matrix below_loq;      // N x K, 1 = reported below the limit of quantification
  std::vector<std::string> location_ids;
  std::vector<int> years;

  std::size_t n_rows() const noexcept { return location_ids.size(); }

  const RawColumn& column(const std::string& name) const {
    for (const auto& c : predictors)
      if (c.name == name) return c;
    throw DataError("raw table has no column '" + name + "'");
  }
};

inline void write_raw_table(const std::filesystem::path& dir, const RawTable& raw) {
  std::filesystem::create_directories(dir);
  const std::size_t n = raw.n_rows();
  csv::Table pred;
  for (const auto& c : raw.predictors) pred.header.push_back(c.name);
  pred.rows.assign(n, {});
  for (std::size_t r = 0; r < n; ++r)
    for (const auto& c : raw.predictors) pred.rows[r].push_back(c.values.at(r));
  csv::write(dir / "predictors.csv", pred);

  csv::Table conc;
  conc.header = raw.response_names;
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<std::string> cells;
    for (std::size_t k = 0; k < raw.response_names.size(); ++k)
      cells.push_back(raw.below_loq(r, k) != 0.0 ? std::string(kBelowLoq)
                                                 : csv::format_number(raw.concentration(r, k)));
    conc.rows.push_back(std::move(cells));
  }
  csv::write(dir / "concentrations.csv", conc);

  csv::Table sites;
  sites.header = {"location_id", "year"};
  for (std::size_t r = 0; r < n; ++r)
    sites.rows.push_back({raw.location_ids[r], std::to_string(raw.years[r])});
  csv::write(dir / "sites.csv", sites);

  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : raw.predictors) {
    nlohmann::json j{{"name", c.name}, {"type", to_string(c.type)}};
    if (c.type == RawColumnType::weather_lag) {
      j["weather_variable"] = c.weather_variable;
      j["lag"] = c.lag;
    }
    cols.push_back(std::move(j));
  }
  nlohmann::json schema{{"format_version", 1}, {"columns", cols}, {"responses", raw.response_names}};
  write_file(dir / "raw_schema.json", schema.dump(2) + "\n");
}

inline RawTable read_raw_table(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw DataError("raw table directory not found: " + dir.string());
  RawTable raw;
  const auto schema = nlohmann::json::parse(read_file(dir / "raw_schema.json"));
  const auto pred = csv::read(dir / "predictors.csv");
  const auto& cols = schema.at("columns");
  if (cols.size() != pred.header.size())
    throw DataError("raw_schema.json and predictors.csv disagree on column count");
  for (std::size_t c = 0; c < cols.size(); ++c) {
    RawColumn col;
    col.name = cols[c].at("name").get<std::string>();
    if (col.name != pred.header[c])
      throw DataError("predictors.csv column " + std::to_string(c) + " is '" + pred.header[c] +
                      "', schema says '" + col.name + "'");
    col.type = raw_column_type_from_string(cols[c].at("type").get<std::string>());
    if (col.type == RawColumnType::weather_lag) {
      col.weather_variable = cols[c].at("weather_variable").get<std::string>();
      col.lag = cols[c].at("lag").get<int>();
    }
    col.values.reserve(pred.rows.size());
    for (const auto& row : pred.rows) col.values.push_back(row[c]);
    raw.predictors.push_back(std::move(col));
  }
  raw.response_names = schema.at("responses").get<std::vector<std::string>>();

  const auto conc = csv::read(dir / "concentrations.csv");
  if (conc.header != raw.response_names)
    throw DataError("concentrations.csv header does not match raw_schema.json responses");
  const std::size_t n = conc.rows.size(), k = conc.header.size();
  raw.concentration = Matrix(n, k);
  raw.below_loq = Matrix(n, k);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < k; ++j) {
      const auto& cell = conc.rows[r][j];
      if (cell == kBelowLoq) {
        raw.below_loq(r, j) = 1.0;
        raw.concentration(r, j) = 0.0;
      } else {
        raw.concentration(r, j) = csv::parse_number(cell);
      }
    }

  const auto sites = csv::read(dir / "sites.csv");
  const auto loc = sites.column_index("location_id"), yr = sites.column_index("year");
  for (const auto& row : sites.rows) {
    raw.location_ids.push_back(row[loc]);
    raw.years.push_back(std::stoi(row[yr]));
  }
  if (raw.location_ids.size() != n || pred.rows.size() != n)
    throw DataError("raw table files disagree on row count");
  return raw;
}

}  // namespace masktab
