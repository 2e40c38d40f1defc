#include "mmv/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mmv::metrics {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("metrics: " + std::to_string(scores.size()) + " scores for " +
                                std::to_string(labels.size()) + " labels");
  for (int y : labels)
    if (y != 0 && y != 1) throw std::invalid_argument("metrics: labels must be 0 or 1");
}

std::vector<std::size_t> order_by_score(std::span<const double> scores, bool descending) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return descending ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  return idx;
}

ScenarioResult summarize(std::vector<double> scores, std::vector<int> labels, double threshold) {
  ScenarioResult r;
  r.count = scores.size();
  r.auc = auc_roc(scores, labels);
  r.f1 = f1_at_threshold(scores, labels, threshold);
  r.roc = roc_curve(scores, labels);
  r.scores = std::move(scores);
  r.labels = std::move(labels);
  return r;
}

}  // namespace

double auc_roc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const auto pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const auto neg = static_cast<double>(labels.size()) - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetric("AUC is undefined when only one class is present");
  for (double s : scores)
    if (std::isnan(s)) throw std::invalid_argument("metrics: NaN score");

  const auto idx = order_by_score(scores, false);
  double rank_sum = 0.0;
  for (std::size_t a = 0; a < idx.size();) {
    std::size_t b = a;
    while (b + 1 < idx.size() && scores[idx[b + 1]] == scores[idx[a]]) ++b;
    const double midrank = static_cast<double>(a + b) / 2.0 + 1.0;
    for (std::size_t i = a; i <= b; ++i)
      if (labels[idx[i]] == 1) rank_sum += midrank;
    a = b + 1;
  }
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double f1_at_threshold(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_inputs(scores, labels);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (predicted && labels[i] == 1) ++tp;
    if (predicted && labels[i] == 0) ++fp;
    if (!predicted && labels[i] == 1) ++fn;
  }
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const auto pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const auto neg = static_cast<double>(labels.size()) - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetric("ROC is undefined when only one class is present");
  const auto idx = order_by_score(scores, true);
  std::vector<RocPoint> pts = {{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  double tp = 0, fp = 0;
  for (std::size_t a = 0; a < idx.size();) {
    std::size_t b = a;
    while (b + 1 < idx.size() && scores[idx[b + 1]] == scores[idx[a]]) ++b;
    for (std::size_t i = a; i <= b; ++i) (labels[idx[i]] == 1 ? tp : fp) += 1.0;
    pts.push_back({fp / neg, tp / pos, scores[idx[a]]});
    a = b + 1;
  }
  return pts;
}

double trapezoid_area(std::span<const RocPoint> pts) {
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    area += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) / 2.0;
  return area;
}

ScenarioResult evaluate_embryo(const Predictions& predictions, std::span<const data::TreatmentCycle> cycles,
                               double threshold) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& c : cycles)
    for (const auto& e : c.embryos) {
      if (!e.transferred) continue;
      const auto it = predictions.find(e.embryo_id);
      if (it == predictions.end()) throw data::DataError("embryo " + e.embryo_id + ": no prediction");
      scores.push_back(it->second);
      labels.push_back(c.success() ? 1 : 0);
    }
  return summarize(std::move(scores), std::move(labels), threshold);
}

ScenarioResult evaluate_treatment(const Predictions& predictions, std::span<const data::TreatmentCycle> cycles,
                                  double threshold, std::vector<std::string>* warnings) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& c : cycles) {
    std::vector<double> parts;
    for (const auto& e : c.embryos) {
      if (!e.transferred) continue;
      const auto it = predictions.find(e.embryo_id);
      if (it == predictions.end()) throw data::DataError("embryo " + e.embryo_id + ": no prediction");
      parts.push_back(std::clamp(it->second, 0.0, 1.0));
    }
    // Summing in sorted order keeps the total independent of embryo order.
    std::sort(parts.begin(), parts.end());
    const double total = std::accumulate(parts.begin(), parts.end(), 0.0);
    if (parts.empty()) {
      if (warnings) warnings->push_back("treatment " + c.treatment_id + " has no transferred embryos; skipped");
      continue;
    }
    scores.push_back(total);
    labels.push_back(c.success() ? 1 : 0);
  }
  return summarize(std::move(scores), std::move(labels), threshold);
}

MetricsReport evaluate(const Predictions& predictions, std::span<const data::TreatmentCycle> cycles,
                       std::vector<std::string>* warnings) {
  return {evaluate_embryo(predictions, cycles), evaluate_treatment(predictions, cycles, kTreatmentThreshold, warnings)};
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["embryo_auc"] = r.embryo.auc;
  j["embryo_f1"] = r.embryo.f1;
  j["treatment_auc"] = r.treatment.auc;
  j["treatment_f1"] = r.treatment.f1;
  j["n_embryos"] = r.embryo.count;
  j["n_treatments"] = r.treatment.count;
  return j;
}

}  // namespace mmv::metrics
