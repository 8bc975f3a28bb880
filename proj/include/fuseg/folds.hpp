#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fuseg/manifest.hpp"

namespace fuseg {

struct FoldSplit {
  std::vector<std::string> train, val, test;

  const std::vector<std::string>& subset(int which) const {
    return which == 0 ? train : which == 1 ? val : test;
  }
};

// A k-way set of independent seeded 60/20/20 splits. Studies of the same
// patient always land in the same subset of a fold.
struct FoldPlan {
  std::uint64_t seed = 0;
  std::vector<FoldSplit> folds;

  int n_folds() const { return static_cast<int>(folds.size()); }
};

FoldPlan make_folds(const DatasetManifest& manifest, std::uint64_t seed, int n_folds = 5);

// Percentage dissimilarity between subsets of two folds:
//   entry(i,j) = 100 * (1 - |S_i cap S_j| / |S_i|)
// computed separately for train/val/test. Diagonals are zero.
struct DissimilarityTable {
  Eigen::MatrixXd train, val, test;
};

DissimilarityTable fold_dissimilarity(const FoldPlan& plan);

void print_dissimilarity(std::ostream& os, const DissimilarityTable& table);

void save_fold_plan(const FoldPlan& plan, const std::string& path);
FoldPlan load_fold_plan(const std::string& path);

}  // namespace fuseg
