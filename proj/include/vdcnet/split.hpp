#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "vdcnet/manifest.hpp"

namespace vdcnet {

// Indices into the record list passed in.
struct SplitResult {
  std::vector<std::size_t> train, test;
};

// Stratified by label; all records sharing a parent_id land on one side.
// Each class contributes groups until its test count is closest to
// round(test_frac * class count).
SplitResult split_train_test(const std::vector<ManifestRecord>& records, double test_frac, std::uint64_t seed);

struct FoldPlan {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> folds;          // validation indices per fold
  std::vector<std::array<std::size_t, 2>> class_counts;  // per fold: {label 0, label 1}

  // Everything outside fold i.
  std::vector<std::size_t> training_indices(std::size_t i) const;
};

// Parent groups of each class are dealt, in seeded order, to the fold that
// currently holds the fewest samples of that class.
FoldPlan stratified_kfold(const std::vector<ManifestRecord>& records, std::size_t k, std::uint64_t seed);

}  // namespace vdcnet
