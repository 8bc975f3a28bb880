#include "fuseg/folds.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "fuseg/rng.hpp"

namespace fuseg {
namespace {

struct PatientGroup {
  std::string patient_id;
  std::vector<std::string> study_ids;
};

std::vector<PatientGroup> group_by_patient(const DatasetManifest& manifest) {
  std::vector<PatientGroup> groups;
  std::map<std::string, std::size_t> index;
  for (const auto& e : manifest.entries) {
    auto it = index.find(e.patient_id);
    if (it == index.end()) {
      index[e.patient_id] = groups.size();
      groups.push_back({e.patient_id, {e.study_id}});
    } else {
      groups[it->second].study_ids.push_back(e.study_id);
    }
  }
  return groups;
}

}  // namespace

FoldPlan make_folds(const DatasetManifest& manifest, std::uint64_t seed, int n_folds) {
  require(n_folds >= 1, ErrorCode::kInvalidArgument, "make_folds: n_folds must be >= 1");
  auto groups = group_by_patient(manifest);
  const int n_studies = static_cast<int>(manifest.entries.size());
  require(static_cast<int>(groups.size()) >= 5, ErrorCode::kInvalidArgument,
          "make_folds: need at least 5 distinct patients for a 60/20/20 split, got " +
              std::to_string(groups.size()));

  const int target_train = static_cast<int>(std::lround(0.6 * n_studies));
  const int target_val = static_cast<int>(std::lround(0.2 * n_studies));
  const int target_test = n_studies - target_train - target_val;
  require(target_val >= 1 && target_test >= 1 && target_train >= 1, ErrorCode::kInvalidArgument,
          "make_folds: dataset too small for a 60/20/20 split");

  FoldPlan plan;
  plan.seed = seed;
  plan.folds.resize(n_folds);

  for (int f = 0; f < n_folds; ++f) {
    Rng rng(Rng::stream(seed, 0x666f6c64ULL /* 'fold' */, static_cast<std::uint64_t>(f)));
    std::vector<std::size_t> order(groups.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    // multi-study patients first, singletons last to top subsets up exactly;
    // the shuffle stays the tie-breaker among equal-sized groups
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return groups[a].study_ids.size() > groups[b].study_ids.size();
    });

    const int targets[3] = {target_train, target_val, target_test};
    int counts[3] = {0, 0, 0};
    FoldSplit& split = plan.folds[f];
    for (std::size_t gi : order) {
      const auto& g = groups[gi];
      // assign whole patient group to the subset with the largest deficit
      int best = 0;
      for (int s = 1; s < 3; ++s)
        if (targets[s] - counts[s] > targets[best] - counts[best]) best = s;
      auto& dst = best == 0 ? split.train : best == 1 ? split.val : split.test;
      for (const auto& id : g.study_ids) dst.push_back(id);
      counts[best] += static_cast<int>(g.study_ids.size());
    }
    for (int s = 0; s < 3; ++s)
      require(std::abs(counts[s] - targets[s]) <= 1, ErrorCode::kInvalidArgument,
              "make_folds: patient grouping too coarse to satisfy 60/20/20 within one study");
  }
  return plan;
}

DissimilarityTable fold_dissimilarity(const FoldPlan& plan) {
  const int k = plan.n_folds();
  DissimilarityTable t{Eigen::MatrixXd::Zero(k, k), Eigen::MatrixXd::Zero(k, k),
                       Eigen::MatrixXd::Zero(k, k)};
  for (int which = 0; which < 3; ++which) {
    Eigen::MatrixXd& m = which == 0 ? t.train : which == 1 ? t.val : t.test;
    std::vector<std::set<std::string>> sets(k);
    for (int i = 0; i < k; ++i) {
      const auto& v = plan.folds[i].subset(which);
      sets[i] = std::set<std::string>(v.begin(), v.end());
    }
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        if (sets[i].empty()) continue;
        std::size_t common = 0;
        for (const auto& id : sets[i]) common += sets[j].count(id);
        m(i, j) = 100.0 * (1.0 - static_cast<double>(common) / static_cast<double>(sets[i].size()));
      }
    }
  }
  return t;
}

void print_dissimilarity(std::ostream& os, const DissimilarityTable& table) {
  const int k = static_cast<int>(table.train.rows());
  os << "Percentage dissimilarity (train, val, test) between folds\n";
  os << "fold";
  for (int j = 0; j < k; ++j) os << "\t" << (j + 1);
  os << "\n";
  auto fmt = [](double v) {
    std::ostringstream ss;
    ss << (std::round(v * 10.0) / 10.0);
    return ss.str();
  };
  for (int i = 0; i < k; ++i) {
    os << (i + 1);
    for (int j = 0; j < k; ++j)
      os << "\t(" << fmt(table.train(i, j)) << "," << fmt(table.val(i, j)) << ","
         << fmt(table.test(i, j)) << ")";
    os << "\n";
  }
}

void save_fold_plan(const FoldPlan& plan, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, path + ": cannot open for writing");
  out << "# fuseg fold plan v1\n";
  out << "seed " << plan.seed << "\n";
  out << "folds " << plan.n_folds() << "\n";
  static const char* kNames[3] = {"train", "val", "test"};
  for (int f = 0; f < plan.n_folds(); ++f)
    for (int s = 0; s < 3; ++s)
      for (const auto& id : plan.folds[f].subset(s)) out << (f + 1) << ' ' << kNames[s] << ' ' << id << '\n';
  if (!out) fail(ErrorCode::kIo, path + ": write failed");
}

FoldPlan load_fold_plan(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, path + ": cannot open fold plan");
  FoldPlan plan;
  std::string line;
  int declared_folds = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string a;
    ss >> a;
    if (a == "seed") {
      ss >> plan.seed;
    } else if (a == "folds") {
      ss >> declared_folds;
      require(declared_folds >= 1, ErrorCode::kMalformedFile, path + ": bad fold count");
      plan.folds.resize(declared_folds);
    } else {
      int f = 0;
      std::string subset, id;
      std::istringstream row(line);
      row >> f >> subset >> id;
      require(f >= 1 && f <= static_cast<int>(plan.folds.size()) && !id.empty(),
              ErrorCode::kMalformedFile, path + ": bad fold plan row: " + line);
      auto& split = plan.folds[f - 1];
      if (subset == "train")
        split.train.push_back(id);
      else if (subset == "val")
        split.val.push_back(id);
      else if (subset == "test")
        split.test.push_back(id);
      else
        fail(ErrorCode::kMalformedFile, path + ": unknown subset '" + subset + "'");
    }
  }
  require(!plan.folds.empty(), ErrorCode::kMalformedFile, path + ": empty fold plan");
  return plan;
}

}  // namespace fuseg
