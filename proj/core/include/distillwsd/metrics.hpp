#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace distillwsd {

struct PredictionRecord {
  std::string image_id;
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
};

/// Non-interpolated AP: mean precision at the rank of every positive, ranking by descending
/// score with ties broken by ascending index. Empty when there is no positive.
std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::uint8_t> labels);

struct F1Pair {
  double f1_c = 0;  // macro: mean of per-class F1
  double f1_o = 0;  // micro: F1 of pooled counts
};

/// F1 of the predictions p > tau.
F1Pair f1_scores(std::span<const PredictionRecord> records, double tau);

/// Exactly the k best-scoring classes of each image are predicted (lower class index on ties).
F1Pair topk_f1(std::span<const PredictionRecord> records, std::size_t k);

/// The thresholds searched by tune_threshold: 0.05, 0.10, ..., 0.95.
std::vector<double> threshold_grid();

/// Grid threshold maximizing F1-O; the smallest wins ties.
double tune_threshold(std::span<const PredictionRecord> records);

struct MetricsReport {
  std::vector<std::optional<double>> per_class_ap;
  double map = 0;
  double f1_c = 0;
  double f1_o = 0;
  double topk_f1_c = 0;
  double topk_f1_o = 0;
  std::size_t top_k = 3;
  double tuned_tau = 0.5;

  std::string to_json() const;
  /// Two columns: class_name, ap. Classes without positives get an empty ap cell.
  std::string per_class_csv(std::span<const std::string> class_names) const;
};

/// Full report. `tau` is normally tuned on a validation split beforehand.
MetricsReport evaluate(std::span<const PredictionRecord> records, double tau, std::size_t top_k = 3);

/// Mean of the defined entries; 0 when none is defined.
double mean_ap(std::span<const std::optional<double>> per_class_ap);

}  // namespace distillwsd
