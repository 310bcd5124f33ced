#pragma once

// Dataset container, feature schema, split assignment and their invariants.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "masktab/error.hpp"
#include "masktab/matrix.hpp"

namespace masktab {

enum class ColumnKind { continuous, one_hot_level };

inline const char* to_string(ColumnKind k) {
  return k == ColumnKind::continuous ? "continuous" : "one_hot_level";
}

inline ColumnKind column_kind_from_string(const std::string& s) {
  if (s == "continuous") return ColumnKind::continuous;
  if (s == "one_hot_level") return ColumnKind::one_hot_level;
  throw DataError("unknown column kind '" + s + "'");
}

struct SchemaEntry {
  std::size_t column_index = 0;
  std::string name;               // encoded column header
  std::string original_variable;  // pre-encoding variable it came from
  ColumnKind kind = ColumnKind::continuous;
  std::string group_id;
  std::optional<std::string> level_label;

  friend bool operator==(const SchemaEntry&, const SchemaEntry&) = default;
};

/// One structural problem found by validate(); row/column are set when applicable.
struct Violation {
  std::string invariant;
  std::string message;
  std::optional<std::size_t> row{};
  std::optional<std::size_t> column{};
};

class FeatureSchema {
 public:
  FeatureSchema() = default;
  explicit FeatureSchema(std::vector<SchemaEntry> entries) : entries_(std::move(entries)) {}

  const std::vector<SchemaEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  const SchemaEntry& operator[](std::size_t i) const { return entries_.at(i); }

  std::vector<std::string> column_names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
  }

  std::optional<std::size_t> find_column(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e.column_index;
    return std::nullopt;
  }

  /// group_id -> columns, ordered by first column of each group.
  std::vector<std::pair<std::string, std::vector<std::size_t>>> groups() const {
    return group_by([](const SchemaEntry& e) { return e.group_id; });
  }

  /// original_variable -> columns, ordered by first column.
  std::vector<std::pair<std::string, std::vector<std::size_t>>> variables() const {
    return group_by([](const SchemaEntry& e) { return e.original_variable; });
  }

  template <typename KeyFn>
  std::vector<std::pair<std::string, std::vector<std::size_t>>> group_by(KeyFn key) const {
    std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
    std::unordered_map<std::string, std::size_t> slot;
    for (const auto& e : entries_) {
      auto k = key(e);
      auto [it, inserted] = slot.try_emplace(k, out.size());
      if (inserted) out.emplace_back(k, std::vector<std::size_t>{});
      out[it->second].second.push_back(e.column_index);
    }
    return out;
  }

  std::vector<Violation> validate() const {
    std::vector<Violation> v;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].column_index != i)
        v.push_back({"schema.column_index", "column index " +
                                                std::to_string(entries_[i].column_index) +
                                                " at position " + std::to_string(i),
                     std::nullopt, i});
    }
    std::map<std::string, std::vector<const SchemaEntry*>> by_group;
    for (const auto& e : entries_) by_group[e.group_id].push_back(&e);
    for (const auto& [gid, members] : by_group) {
      const bool any_onehot = std::any_of(members.begin(), members.end(), [](auto* e) {
        return e->kind == ColumnKind::one_hot_level;
      });
      const bool any_cont = std::any_of(members.begin(), members.end(), [](auto* e) {
        return e->kind == ColumnKind::continuous;
      });
      if (any_onehot && any_cont)
        v.push_back({"schema.group_kind", "group '" + gid + "' mixes continuous and one-hot columns",
                     std::nullopt, members.front()->column_index});
      if (any_cont && members.size() != 1)
        v.push_back({"schema.continuous_singleton",
                     "continuous group '" + gid + "' has " + std::to_string(members.size()) +
                         " columns",
                     std::nullopt, members.front()->column_index});
      if (any_onehot && members.size() < 2)
        v.push_back({"schema.one_hot_siblings", "one-hot group '" + gid + "' has no sibling column",
                     std::nullopt, members.front()->column_index});
    }
    return v;
  }

  friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;

 private:
  std::vector<SchemaEntry> entries_;
};

/// Model-ready data. Masked response cells hold NaN; the mask is authoritative.
struct TabularDataset {
  Matrix x;       // N x P encoded predictors
  Matrix y_cont;  // N x K log(x+1) concentrations
  Matrix y_bin;   // N x K presence indicators
  Matrix mask;    // N x K, 1 = observed
  std::vector<std::string> blocks;
  FeatureSchema schema;
  std::vector<std::string> response_names;

  std::size_t n_rows() const noexcept { return x.rows(); }
  std::size_t n_features() const noexcept { return x.cols(); }
  std::size_t n_responses() const noexcept { return mask.cols(); }
};

inline constexpr double kSentinel = std::numeric_limits<double>::quiet_NaN();

inline std::string block_label(const std::string& location_id, int year) {
  return location_id + "|" + std::to_string(year);
}

/// Indices of rows; train_rows includes val_rows.
struct SplitAssignment {
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> val_rows;
  std::vector<std::size_t> test_rows;

  /// Training rows that are not held out for validation.
  std::vector<std::size_t> fit_rows() const {
    std::vector<std::size_t> out;
    std::set_difference(train_rows.begin(), train_rows.end(), val_rows.begin(), val_rows.end(),
                        std::back_inserter(out));
    return out;
  }

  friend bool operator==(const SplitAssignment&, const SplitAssignment&) = default;
};

namespace detail {
inline std::string cell(std::size_t r, std::size_t c) {
  return "(" + std::to_string(r) + "," + std::to_string(c) + ")";
}
}  // namespace detail

/// Checks every TabularDataset invariant. Violations are returned, never thrown.
inline std::vector<Violation> validate(const TabularDataset& ds) {
  std::vector<Violation> v = ds.schema.validate();
  const std::size_t n = ds.x.rows(), p = ds.x.cols(), k = ds.mask.cols();

  if (ds.schema.size() != p)
    v.push_back({"shape.schema", "schema has " + std::to_string(ds.schema.size()) +
                                     " entries for " + std::to_string(p) + " columns"});
  if (ds.y_cont.rows() != n || ds.y_bin.rows() != n || ds.mask.rows() != n ||
      ds.y_cont.cols() != k || ds.y_bin.cols() != k)
    v.push_back({"shape.responses", "response matrices are not all " + std::to_string(n) + "x" +
                                        std::to_string(k)});
  if (ds.blocks.size() != n)
    v.push_back({"shape.blocks", std::to_string(ds.blocks.size()) + " block labels for " +
                                     std::to_string(n) + " rows"});
  if (ds.response_names.size() != k)
    v.push_back({"shape.response_names", std::to_string(ds.response_names.size()) +
                                             " response names for " + std::to_string(k) +
                                             " responses"});
  if (!v.empty() && (ds.y_cont.rows() != n || ds.y_bin.rows() != n || ds.mask.rows() != n ||
                     ds.y_cont.cols() != k || ds.y_bin.cols() != k))
    return v;

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < p; ++c)
      if (!std::isfinite(ds.x(i, c)))
        v.push_back({"x.finite", "non-finite predictor at " + detail::cell(i, c), i, c});
    for (std::size_t j = 0; j < k; ++j) {
      const double m = ds.mask(i, j);
      if (m != 0.0 && m != 1.0) {
        v.push_back({"mask.binary", "mask not in {0,1} at " + detail::cell(i, j), i, j});
        continue;
      }
      if (m == 0.0) continue;
      const double yc = ds.y_cont(i, j), yb = ds.y_bin(i, j);
      if (!std::isfinite(yc) || yc < 0.0) {
        v.push_back({"y_cont.nonnegative", "invalid continuous response at " + detail::cell(i, j),
                     i, j});
        continue;
      }
      if (yb != 0.0 && yb != 1.0) {
        v.push_back({"y_bin.binary", "binary response not in {0,1} at " + detail::cell(i, j), i, j});
        continue;
      }
      if ((yb == 1.0) != (yc > 0.0))
        v.push_back({"bin_cont.consistency", "bin/cont inconsistency at " + detail::cell(i, j), i, j});
    }
  }

  for (std::size_t c = 0; c < p && n > 0; ++c) {
    const double first = ds.x(0, c);
    bool constant = true;
    for (std::size_t i = 1; i < n && constant; ++i) constant = ds.x(i, c) == first;
    if (constant) {
      const std::string name = c < ds.schema.size() ? ds.schema[c].name : std::to_string(c);
      v.push_back({"x.nonconstant", "constant predictor column " + std::to_string(c) + " '" +
                                        name + "'",
                   std::nullopt, c});
    }
  }
  return v;
}

/// Split invariants: disjoint cover, val within train, no block in two partitions.
inline std::vector<Violation> validate_split(const SplitAssignment& split,
                                             const std::vector<std::string>& blocks) {
  std::vector<Violation> v;
  const std::size_t n = blocks.size();
  std::vector<int> where(n, -1);  // 0 fit, 1 val, 2 test
  std::set<std::size_t> train(split.train_rows.begin(), split.train_rows.end());
  for (auto r : split.val_rows)
    if (!train.count(r))
      v.push_back({"split.val_subset", "validation row " + std::to_string(r) + " not in train", r});
  auto mark = [&](std::size_t r, int part) {
    if (r >= n) {
      v.push_back({"split.range", "row " + std::to_string(r) + " out of range", r});
      return;
    }
    if (where[r] != -1 && !(where[r] == 0 && part == 1))
      v.push_back({"split.disjoint", "row " + std::to_string(r) + " assigned twice", r});
    where[r] = part;
  };
  for (auto r : split.train_rows) mark(r, 0);
  for (auto r : split.val_rows) mark(r, 1);
  for (auto r : split.test_rows) mark(r, 2);
  for (std::size_t r = 0; r < n; ++r)
    if (where[r] == -1) v.push_back({"split.cover", "row " + std::to_string(r) + " unassigned", r});

  std::map<std::string, int> block_part;
  for (std::size_t r = 0; r < n; ++r) {
    if (where[r] == -1) continue;
    auto [it, inserted] = block_part.try_emplace(blocks[r], where[r]);
    if (!inserted && it->second != where[r])
      v.push_back({"split.block_leakage", "block '" + blocks[r] + "' spans two partitions", r});
  }
  return v;
}

}  // namespace masktab
