#pragma once

// Dataset interchange directory:
//   features.csv        header = schema column names
//   responses_cont.csv  header = response names, NA where masked
//   responses_bin.csv   header = response names, NA where masked
//   mask.csv            header = response names, 0/1
//   blocks.csv          single column "block"
//   schema.json
// Row order is shared across every CSV.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "masktab/csv.hpp"
#include "masktab/data_model.hpp"

namespace masktab {

using json = nlohmann::json;

inline constexpr int kDatasetFormatVersion = 1;

namespace detail {
template <typename F>
auto with_json_errors(const std::filesystem::path& path, F&& f) {
  try {
    return f(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw DataError("malformed " + path.string() + ": " + e.what());
  }
}
}  // namespace detail

inline json schema_to_json(const FeatureSchema& schema) {
  json cols = json::array();
  for (const auto& e : schema.entries()) {
    json j{{"column_index", e.column_index},
           {"name", e.name},
           {"original_variable", e.original_variable},
           {"kind", to_string(e.kind)},
           {"group_id", e.group_id}};
    j["level_label"] = e.level_label ? json(*e.level_label) : json(nullptr);
    cols.push_back(std::move(j));
  }
  return json{{"format_version", kDatasetFormatVersion}, {"columns", std::move(cols)}};
}

inline FeatureSchema schema_from_json(const json& j) {
  std::vector<SchemaEntry> entries;
  for (const auto& c : j.at("columns")) {
    SchemaEntry e;
    e.column_index = c.at("column_index").get<std::size_t>();
    e.name = c.at("name").get<std::string>();
    e.original_variable = c.at("original_variable").get<std::string>();
    e.kind = column_kind_from_string(c.at("kind").get<std::string>());
    e.group_id = c.at("group_id").get<std::string>();
    if (c.contains("level_label") && !c.at("level_label").is_null())
      e.level_label = c.at("level_label").get<std::string>();
    entries.push_back(std::move(e));
  }
  return FeatureSchema(std::move(entries));
}

namespace detail {

inline csv::Table matrix_table(const Matrix& m, const std::vector<std::string>& header) {
  csv::Table t;
  t.header = header;
  t.rows.reserve(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::vector<std::string> cells;
    cells.reserve(m.cols());
    for (double v : m.row(r)) cells.push_back(csv::format_number(v));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline Matrix table_matrix(const csv::Table& t, const std::string& what) {
  Matrix m(t.rows.size(), t.header.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    for (std::size_t c = 0; c < t.header.size(); ++c) {
      try {
        m(r, c) = csv::parse_number(t.rows[r][c]);
      } catch (const DataError& e) {
        throw DataError(what + " row " + std::to_string(r) + ": " + e.what());
      }
    }
  return m;
}

}  // namespace detail

inline void write_dataset(const std::filesystem::path& dir, const TabularDataset& ds) {
  std::filesystem::create_directories(dir);
  csv::write(dir / "features.csv", detail::matrix_table(ds.x, ds.schema.column_names()));
  csv::write(dir / "responses_cont.csv", detail::matrix_table(ds.y_cont, ds.response_names));
  csv::write(dir / "responses_bin.csv", detail::matrix_table(ds.y_bin, ds.response_names));
  csv::write(dir / "mask.csv", detail::matrix_table(ds.mask, ds.response_names));
  csv::Table blocks;
  blocks.header = {"block"};
  for (const auto& b : ds.blocks) blocks.rows.push_back({b});
  csv::write(dir / "blocks.csv", blocks);
  write_file(dir / "schema.json", schema_to_json(ds.schema).dump(2) + "\n");
}

inline TabularDataset read_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw DataError("dataset directory not found: " + dir.string());
  TabularDataset ds;
  ds.schema = detail::with_json_errors(dir / "schema.json", [](const json& j) { return schema_from_json(j); });
  const auto features = csv::read(dir / "features.csv");
  if (features.header != ds.schema.column_names())
    throw DataError("features.csv header does not match schema.json");
  ds.x = detail::table_matrix(features, "features.csv");
  const auto cont = csv::read(dir / "responses_cont.csv");
  const auto bin = csv::read(dir / "responses_bin.csv");
  const auto mask = csv::read(dir / "mask.csv");
  if (bin.header != cont.header || mask.header != cont.header)
    throw DataError("response files disagree on response names");
  ds.response_names = cont.header;
  ds.y_cont = detail::table_matrix(cont, "responses_cont.csv");
  ds.y_bin = detail::table_matrix(bin, "responses_bin.csv");
  ds.mask = detail::table_matrix(mask, "mask.csv");
  const auto blocks = csv::read(dir / "blocks.csv");
  for (const auto& r : blocks.rows) ds.blocks.push_back(r.at(0));
  const std::size_t n = ds.x.rows();
  if (ds.y_cont.rows() != n || ds.y_bin.rows() != n || ds.mask.rows() != n ||
      ds.blocks.size() != n)
    throw DataError("dataset files disagree on row count");
  return ds;
}

inline json split_to_json(const SplitAssignment& s) {
  return json{{"format_version", kDatasetFormatVersion},
              {"train_rows", s.train_rows},
              {"val_rows", s.val_rows},
              {"test_rows", s.test_rows}};
}

inline SplitAssignment split_from_json(const json& j) {
  SplitAssignment s;
  s.train_rows = j.at("train_rows").get<std::vector<std::size_t>>();
  s.val_rows = j.at("val_rows").get<std::vector<std::size_t>>();
  s.test_rows = j.at("test_rows").get<std::vector<std::size_t>>();
  return s;
}

inline void write_split(const std::filesystem::path& path, const SplitAssignment& s) {
  write_file(path, split_to_json(s).dump(2) + "\n");
}

inline SplitAssignment read_split(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("split file not found: " + path.string());
  return detail::with_json_errors(path, [](const json& j) { return split_from_json(j); });
}

}  // namespace masktab
