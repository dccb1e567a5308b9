#include "distillwsd/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "distillwsd/error.hpp"
#include "distillwsd/log.hpp"

namespace distillwsd {
namespace {

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

double f1_of(const Counts& c) {
  if (c.tp == 0) return 0.0;
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
}

std::size_t class_count(std::span<const PredictionRecord> records) {
  if (records.empty()) return 0;
  const std::size_t k = records.front().scores.size();
  for (const auto& r : records) {
    if (r.scores.size() != k || r.labels.size() != k) {
      throw DimensionError("prediction record '" + r.image_id + "' has inconsistent class count");
    }
  }
  return k;
}

template <typename Predict>
F1Pair f1_from(std::span<const PredictionRecord> records, Predict predict) {
  const std::size_t k = class_count(records);
  std::vector<Counts> per_class(k);
  std::vector<std::uint8_t> pred;
  for (const auto& r : records) {
    pred = predict(r);
    for (std::size_t c = 0; c < k; ++c) {
      const bool y = r.labels[c] != 0;
      if (pred[c] && y) ++per_class[c].tp;
      else if (pred[c]) ++per_class[c].fp;
      else if (y) ++per_class[c].fn;
    }
  }
  F1Pair out;
  Counts pooled;
  for (const auto& c : per_class) {
    out.f1_c += f1_of(c);
    pooled.tp += c.tp;
    pooled.fp += c.fp;
    pooled.fn += c.fn;
  }
  if (k > 0) out.f1_c /= static_cast<double>(k);
  out.f1_o = f1_of(pooled);
  return out;
}

}  // namespace

std::optional<double> average_precision(std::span<const double> scores,
                                        std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw DimensionError("average_precision: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t hits = 0;
  double sum = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  if (hits == 0) return std::nullopt;
  return sum / static_cast<double>(hits);
}

F1Pair f1_scores(std::span<const PredictionRecord> records, double tau) {
  return f1_from(records, [tau](const PredictionRecord& r) {
    std::vector<std::uint8_t> p(r.scores.size());
    for (std::size_t c = 0; c < p.size(); ++c) p[c] = r.scores[c] > tau ? 1 : 0;
    return p;
  });
}

F1Pair topk_f1(std::span<const PredictionRecord> records, std::size_t k) {
  const std::size_t classes = class_count(records);
  if (k == 0 || (!records.empty() && k > classes)) {
    throw ContractError("topk_f1: k must lie in [1, " + std::to_string(classes) + "]");
  }
  return f1_from(records, [k](const PredictionRecord& r) {
    std::vector<std::size_t> order(r.scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return r.scores[a] > r.scores[b]; });
    std::vector<std::uint8_t> p(r.scores.size(), 0);
    for (std::size_t i = 0; i < k; ++i) p[order[i]] = 1;
    return p;
  });
}

std::vector<double> threshold_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 19; ++i) grid.push_back(static_cast<double>(i) / 20.0);
  return grid;
}

double tune_threshold(std::span<const PredictionRecord> records) {
  if (records.empty()) throw InputError("tune_threshold: no validation records");
  double best_tau = 0, best = -1;
  for (double tau : threshold_grid()) {
    const double f = f1_scores(records, tau).f1_o;
    if (f > best) {
      best = f;
      best_tau = tau;
    }
  }
  return best_tau;
}

double mean_ap(std::span<const std::optional<double>> per_class_ap) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& ap : per_class_ap) {
    if (ap) {
      sum += *ap;
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

MetricsReport evaluate(std::span<const PredictionRecord> records, double tau, std::size_t top_k) {
  const std::size_t k = class_count(records);
  MetricsReport report;
  std::vector<double> column(records.size());
  std::vector<std::uint8_t> truth(records.size());
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < records.size(); ++i) {
      column[i] = records[i].scores[c];
      truth[i] = records[i].labels[c];
    }
    report.per_class_ap.push_back(average_precision(column, truth));
    if (!report.per_class_ap.back()) spdlog::warn("class {} has no positives; excluded from mAP", c);
  }
  report.map = mean_ap(report.per_class_ap);
  const auto f1 = f1_scores(records, tau);
  report.f1_c = f1.f1_c;
  report.f1_o = f1.f1_o;
  report.top_k = std::min(top_k, k);
  if (report.top_k > 0) {
    const auto tk = topk_f1(records, report.top_k);
    report.topk_f1_c = tk.f1_c;
    report.topk_f1_o = tk.f1_o;
  }
  report.tuned_tau = tau;
  return report;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["map"] = map;
  nlohmann::json aps = nlohmann::json::array();
  for (const auto& ap : per_class_ap) aps.push_back(ap ? nlohmann::json(*ap) : nlohmann::json(nullptr));
  j["per_class_ap"] = aps;
  j["tuned_tau"] = tuned_tau;
  j["f1_c"] = f1_c;
  j["f1_o"] = f1_o;
  j["top_k"] = top_k;
  j["topk_f1_c"] = topk_f1_c;
  j["topk_f1_o"] = topk_f1_o;
  return j.dump(2);
}

std::string MetricsReport::per_class_csv(std::span<const std::string> class_names) const {
  std::ostringstream out;
  out.precision(10);
  out << "class_name,ap\n";
  for (std::size_t c = 0; c < per_class_ap.size(); ++c) {
    out << (c < class_names.size() ? class_names[c] : "class" + std::to_string(c)) << ',';
    if (per_class_ap[c]) out << *per_class_ap[c];
    out << '\n';
  }
  return out.str();
}

}  // namespace distillwsd
