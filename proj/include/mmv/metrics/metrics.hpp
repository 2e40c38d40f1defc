#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "mmv/dataset/types.hpp"

namespace mmv::metrics {

/// A metric that is not defined for the given input, e.g. AUC with one class.
class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline constexpr double kEmbryoThreshold = 0.15;
inline constexpr double kTreatmentThreshold = 0.5;

/// Mann-Whitney AUC with midranks for ties.
double auc_roc(std::span<const double> scores, std::span<const int> labels);

/// Positive iff score >= threshold. F1 = 2TP / (2TP + FP + FN), 0 without
/// true positives.
double f1_at_threshold(std::span<const double> scores, std::span<const int> labels, double threshold);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // +inf for the (0,0) corner
};

/// One point per distinct score, descending, from (0,0) to (1,1).
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);
double trapezoid_area(std::span<const RocPoint> points);

struct ScenarioResult {
  double auc = 0.0;
  double f1 = 0.0;
  std::size_t count = 0;
  std::vector<RocPoint> roc;
  std::vector<double> scores;  // as scored: raw per embryo, clamped sums per treatment
  std::vector<int> labels;
};

/// embryo_id -> predicted viability.
using Predictions = std::unordered_map<std::string, double>;

/// Transferred embryos only; label 1 iff the treatment had a birth. Raw
/// scores. Throws DataError naming a transferred embryo without prediction.
ScenarioResult evaluate_embryo(const Predictions& predictions, std::span<const data::TreatmentCycle> cycles,
                               double threshold = kEmbryoThreshold);

/// Per treatment, the sum of its transferred embryos' scores clamped to
/// [0,1]; label 1 iff n_births >= 1. Treatments without transferred embryos
/// are skipped and reported in `warnings`.
ScenarioResult evaluate_treatment(const Predictions& predictions, std::span<const data::TreatmentCycle> cycles,
                                  double threshold = kTreatmentThreshold, std::vector<std::string>* warnings = nullptr);

struct MetricsReport {
  ScenarioResult embryo;
  ScenarioResult treatment;
};

MetricsReport evaluate(const Predictions& predictions, std::span<const data::TreatmentCycle> cycles,
                       std::vector<std::string>* warnings = nullptr);

/// {embryo_auc, embryo_f1, treatment_auc, treatment_f1, n_embryos, n_treatments}.
nlohmann::json to_json(const MetricsReport& report);

}  // namespace mmv::metrics
