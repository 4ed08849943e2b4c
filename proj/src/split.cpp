#include "vdcnet/split.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "vdcnet/errors.hpp"
#include "vdcnet/rng.hpp"

namespace vdcnet {

namespace {

struct Group {
  std::string parent;
  int label = 0;
  std::vector<std::size_t> members;
};

// Groups per class, each class list in seeded random order.
std::array<std::vector<Group>, 2> grouped_by_class(const std::vector<ManifestRecord>& records, std::uint64_t seed,
                                                   std::uint64_t purpose) {
  std::map<std::string, Group> by_parent;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const std::string key = r.parent_id.empty() ? r.id : r.parent_id;
    auto [it, fresh] = by_parent.try_emplace(key);
    Group& g = it->second;
    if (fresh) {
      g.parent = key;
      g.label = r.label;
    } else if (g.label != r.label) {
      throw DataError("parent " + key + " has tiles with different labels");
    }
    g.members.push_back(i);
  }
  std::array<std::vector<Group>, 2> out;
  for (auto& [_, g] : by_parent) out[std::size_t(g.label)].push_back(std::move(g));
  for (std::size_t c = 0; c < 2; ++c) {
    if (out[c].empty()) throw DataError("class " + std::to_string(c) + " is absent; cannot stratify");
    Rng rng = make_rng(seed, {purpose, c});
    std::shuffle(out[c].begin(), out[c].end(), rng);
  }
  return out;
}

}  // namespace

SplitResult split_train_test(const std::vector<ManifestRecord>& records, double test_frac, std::uint64_t seed) {
  if (!(test_frac > 0 && test_frac < 1)) throw ArgumentError("test fraction must lie in (0, 1)");
  const auto classes = grouped_by_class(records, seed, fnv1a("split"));
  SplitResult s;
  for (const auto& groups : classes) {
    std::size_t total = 0;
    for (const auto& g : groups) total += g.members.size();
    const double target = std::round(test_frac * double(total));
    double taken = 0;
    for (const auto& g : groups) {
      const double with = taken + double(g.members.size());
      const bool take = std::abs(with - target) < std::abs(taken - target);
      auto& side = take ? s.test : s.train;
      side.insert(side.end(), g.members.begin(), g.members.end());
      if (take) taken = with;
    }
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

std::vector<std::size_t> FoldPlan::training_indices(std::size_t i) const {
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f < folds.size(); ++f)
    if (f != i) out.insert(out.end(), folds[f].begin(), folds[f].end());
  std::sort(out.begin(), out.end());
  return out;
}

FoldPlan stratified_kfold(const std::vector<ManifestRecord>& records, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ArgumentError("k-fold needs k >= 2");
  const auto classes = grouped_by_class(records, seed, fnv1a("kfold"));
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.folds.resize(k);
  plan.class_counts.assign(k, {0, 0});
  for (std::size_t c = 0; c < 2; ++c) {
    if (classes[c].size() < k) {
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(classes[c].size()) +
                      " parent groups, fewer than k = " + std::to_string(k));
    }
    for (const auto& g : classes[c]) {
      std::size_t best = 0;
      for (std::size_t f = 1; f < k; ++f)
        if (plan.class_counts[f][c] < plan.class_counts[best][c]) best = f;
      plan.folds[best].insert(plan.folds[best].end(), g.members.begin(), g.members.end());
      plan.class_counts[best][c] += g.members.size();
    }
  }
  for (auto& f : plan.folds) std::sort(f.begin(), f.end());
  return plan;
}

}  // namespace vdcnet
