#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace vdcnet {

struct RocPoint {
  double fpr = 0, tpr = 0;
  double threshold = 0;  // scores >= threshold are called damaged
};

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

// Confusion counts with the rule score >= threshold -> positive.
Confusion confusion_at(std::span<const double> scores, std::span<const int> labels, double threshold);

struct MetricsReport {
  std::size_t n = 0, positives = 0, negatives = 0;
  std::vector<RocPoint> roc;
  std::optional<double> auc;  // absent for single-class sets
  double accuracy = 0;        // at threshold 0.5
  Confusion confusion;        // at threshold 0.5
  std::size_t fn_at_95 = 0;   // damaged with score < 0.95
  std::size_t fp_at_10 = 0;   // undamaged with score >= 0.10
  std::optional<double> precision_at_full_recall;
  std::optional<double> full_recall_threshold;  // min damaged score
  double mean_bce = 0;
};

// Scores are class-1 probabilities, labels are 0/1.
MetricsReport evaluate_scores(std::span<const double> scores, std::span<const int> labels);

// ROC over every distinct score as a threshold, from (0, 0) to (1, 1).
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);
double trapezoid_auc(const std::vector<RocPoint>& roc);

nlohmann::ordered_json to_json(const MetricsReport& report);

}  // namespace vdcnet
