#include <gtest/gtest.h>

#include <map>
#include <set>

#include "test_support.hpp"

using namespace masktab;

namespace {

struct Blocks {
  std::vector<std::string> labels;
  Matrix y_bin, mask;
};

Blocks equal_blocks(std::size_t n_blocks, std::size_t per_block, std::size_t k = 2) {
  Blocks b;
  b.y_bin = Matrix(n_blocks * per_block, k);
  b.mask = Matrix(n_blocks * per_block, k, 1.0);
  for (std::size_t i = 0; i < n_blocks; ++i)
    for (std::size_t r = 0; r < per_block; ++r) {
      b.labels.push_back("L" + std::to_string(i) + "|2022");
      for (std::size_t j = 0; j < k; ++j) b.y_bin(i * per_block + r, j) = (i + r + j) % 2;
    }
  return b;
}

std::set<std::string> labels_of(const std::vector<std::size_t>& rows, const std::vector<std::string>& labels) {
  std::set<std::string> out;
  for (auto r : rows) out.insert(labels[r]);
  return out;
}

}  // namespace

TEST(BlockSplit, TenEqualBlocksGiveTwoTestBlocks) {
  const auto b = equal_blocks(10, 3);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = block_split(b.labels, b.y_bin, b.mask, {0.2, 0.2, seed});
    EXPECT_EQ(labels_of(s.test_rows, b.labels).size(), 2u);
    EXPECT_EQ(s.test_rows.size(), 6u);
    EXPECT_TRUE(validate_split(s, b.labels).empty());
  }
}

TEST(BlockSplit, SameSeedSameAssignment) {
  const auto p = masktab::testing::preprocessed(masktab::testing::small_synth(5));
  const auto& ds = p.result.dataset;
  const auto a = block_split(ds, {0.2, 0.2, 99});
  const auto b = block_split(ds, {0.2, 0.2, 99});
  EXPECT_EQ(a, b);
  const auto c = block_split(ds, {0.2, 0.2, 100});
  EXPECT_NE(a, c);
}

TEST(BlockSplit, NoLeakageAndTestFractionOnSyntheticBlocks) {
  const auto p = masktab::testing::preprocessed(masktab::testing::small_synth(11));
  const auto& ds = p.result.dataset;
  std::map<std::string, std::size_t> sizes;
  for (const auto& l : ds.blocks) ++sizes[l];
  std::size_t largest = 0;
  for (const auto& [l, n] : sizes) largest = std::max(largest, n);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = block_split(ds, {0.2, 0.2, seed});
    EXPECT_TRUE(validate_split(s, ds.blocks).empty()) << "seed " << seed;
    const double target = 0.2 * static_cast<double>(ds.n_rows());
    EXPECT_LE(std::abs(static_cast<double>(s.test_rows.size()) - target), static_cast<double>(largest));
    EXPECT_FALSE(s.val_rows.empty());
    EXPECT_FALSE(s.fit_rows().empty());
  }
}

TEST(BlockSplit, PositiveRatesStayClose) {
  // Greedy stratification: for responses with enough observed cells on both
  // sides, train and test positive rates stay within 0.15.
  const auto p = masktab::testing::preprocessed(masktab::testing::small_synth(3));
  const auto& ds = p.result.dataset;
  std::size_t checked = 0, within = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = block_split(ds, {0.2, 0.2, seed});
    for (std::size_t j = 0; j < ds.n_responses(); ++j) {
      auto rate = [&](const std::vector<std::size_t>& rows, std::size_t& obs) {
        double pos = 0;
        obs = 0;
        for (auto r : rows)
          if (ds.mask(r, j) == 1.0) {
            ++obs;
            pos += ds.y_bin(r, j);
          }
        return obs ? pos / static_cast<double>(obs) : 0.0;
      };
      std::size_t n_train = 0, n_test = 0;
      const double a = rate(s.train_rows, n_train), b = rate(s.test_rows, n_test);
      if (n_train < 50 || n_test < 20) continue;
      ++checked;
      within += std::abs(a - b) <= 0.15;
    }
  }
  ASSERT_GT(checked, 100u);
  EXPECT_GE(static_cast<double>(within) / static_cast<double>(checked), 0.95);
}

TEST(BlockSplit, TooFewBlocksRejected) {
  const auto b = equal_blocks(2, 5);
  EXPECT_THROW(block_split(b.labels, b.y_bin, b.mask), DataError);
  const auto c = equal_blocks(3, 1);
  EXPECT_THROW(block_split(c.labels, c.y_bin, c.mask, {0.01, 0.01, 0}), DataError);
}

TEST(BlockSplit, BadFractionsRejected) {
  const auto b = equal_blocks(10, 2);
  EXPECT_THROW(block_split(b.labels, b.y_bin, b.mask, {0.0, 0.2, 0}), ConfigError);
  EXPECT_THROW(block_split(b.labels, b.y_bin, b.mask, {0.2, 1.0, 0}), ConfigError);
}

TEST(BlockSplit, ValidationRowsAreWholeTrainingBlocks) {
  const auto b = equal_blocks(20, 4);
  const auto s = block_split(b.labels, b.y_bin, b.mask, {0.2, 0.25, 3});
  const auto val = labels_of(s.val_rows, b.labels);
  for (auto r : s.fit_rows()) EXPECT_FALSE(val.count(b.labels[r]));
  EXPECT_EQ(s.train_rows.size() + s.test_rows.size(), b.labels.size());
}
