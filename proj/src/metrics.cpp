#include "vdcnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vdcnet/autograd.hpp"
#include "vdcnet/errors.hpp"

namespace vdcnet {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ArgumentError("scores and labels differ in length");
  for (int l : labels)
    if (l != 0 && l != 1) throw ArgumentError("labels must be 0 or 1");
  for (double s : scores)
    if (!std::isfinite(s)) throw NumericError("non-finite score");
}

}  // namespace

Confusion confusion_at(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_inputs(scores, labels);
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool call = scores[i] >= threshold;
    if (labels[i] == 1) (call ? c.tp : c.fn)++;
    else (call ? c.fp : c.tn)++;
  }
  return c;
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const std::size_t pos = std::size_t(std::count(labels.begin(), labels.end(), 1));
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) return {};
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> roc{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    // Lowering the threshold to t admits every sample tied at t at once.
    while (i < order.size() && scores[order[i]] == t) {
      labels[order[i]] == 1 ? ++tp : ++fp;
      ++i;
    }
    roc.push_back({double(fp) / double(neg), double(tp) / double(pos), t});
  }
  return roc;
}

double trapezoid_auc(const std::vector<RocPoint>& roc) {
  double area = 0;
  for (std::size_t i = 1; i < roc.size(); ++i)
    area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2;
  return area;
}

MetricsReport evaluate_scores(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  if (scores.empty()) throw ArgumentError("cannot evaluate an empty set");
  MetricsReport r;
  r.n = scores.size();
  r.positives = std::size_t(std::count(labels.begin(), labels.end(), 1));
  r.negatives = r.n - r.positives;
  r.roc = roc_curve(scores, labels);
  if (!r.roc.empty()) r.auc = trapezoid_auc(r.roc);
  r.confusion = confusion_at(scores, labels, 0.5);
  r.accuracy = double(r.confusion.tp + r.confusion.tn) / double(r.n);
  r.fn_at_95 = confusion_at(scores, labels, 0.95).fn;
  r.fp_at_10 = confusion_at(scores, labels, 0.10).fp;
  if (r.positives > 0) {
    double t = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < r.n; ++i)
      if (labels[i] == 1) t = std::min(t, scores[i]);
    const Confusion c = confusion_at(scores, labels, t);
    r.full_recall_threshold = t;
    r.precision_at_full_recall = double(c.tp) / double(c.tp + c.fp);
  }
  double loss = 0;
  for (std::size_t i = 0; i < r.n; ++i) loss += bce_value(scores[i], double(labels[i]));
  r.mean_bce = loss / double(r.n);
  return r;
}

nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["n"] = r.n;
  j["positives"] = r.positives;
  j["negatives"] = r.negatives;
  j["auc"] = r.auc ? nlohmann::ordered_json(*r.auc) : nlohmann::ordered_json(nullptr);
  j["accuracy"] = r.accuracy;
  j["fn_at_95"] = r.fn_at_95;
  j["fp_at_10"] = r.fp_at_10;
  j["precision_at_full_recall"] =
      r.precision_at_full_recall ? nlohmann::ordered_json(*r.precision_at_full_recall) : nlohmann::ordered_json(nullptr);
  j["full_recall_threshold"] =
      r.full_recall_threshold ? nlohmann::ordered_json(*r.full_recall_threshold) : nlohmann::ordered_json(nullptr);
  j["mean_bce"] = r.mean_bce;
  j["confusion_at_0.5"] = {{"tp", r.confusion.tp}, {"fp", r.confusion.fp}, {"tn", r.confusion.tn}, {"fn", r.confusion.fn}};
  nlohmann::ordered_json roc = nlohmann::ordered_json::array();
  for (const auto& p : r.roc) {
    roc.push_back({p.fpr, p.tpr, std::isfinite(p.threshold) ? nlohmann::ordered_json(p.threshold)
                                                            : nlohmann::ordered_json("inf")});
  }
  j["roc"] = roc;
  return j;
}

}  // namespace vdcnet
