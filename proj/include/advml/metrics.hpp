#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "advml/tensor.hpp"

namespace advml {

/// Fraction of rows whose argmax (ties to class 0) equals the label.
/// `probabilities` is [N,2].
double accuracy(const Tensor& probabilities, std::span<const int> labels);

/// Mann-Whitney AUROC: the chance a random positive outscores a random
/// negative, ties counted 1/2. Computed from mid-ranks in O(n log n).
/// Throws ValueError unless both classes are present.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Mean over rows of max(p0, p1).
double mean_confidence(const Tensor& probabilities);

/// p(class 1) column of an [N,2] probability tensor.
std::vector<double> positive_scores(const Tensor& probabilities);

/// Table row names in display order.
inline constexpr std::string_view kConditionOrder[] = {
    "Clean", "PGD-White", "PGD-Black", "Patch-Natural", "Patch-White", "Patch-Black"};

struct ConditionMetrics {
  std::string condition;
  std::size_t n = 0;
  double accuracy = 0.0;
  double auroc = 0.0;
  double avg_confidence = 0.0;

  friend bool operator==(const ConditionMetrics&, const ConditionMetrics&) = default;
};

/// Evaluates probabilities against labels into one row.
ConditionMetrics evaluate_condition(std::string condition, const Tensor& probabilities,
                                    std::span<const int> labels);

struct EvaluationReport {
  std::vector<ConditionMetrics> rows;  // display order
  std::string model_digest;
  std::string dataset_digest;
  std::vector<std::string> warnings;
};

inline constexpr std::string_view kReportCsvHeader = "condition,n,accuracy,auroc,avg_confidence";

/// Orders rows per `kConditionOrder` and records a warning for each missing
/// condition. Throws ValueError without a Clean row, for unknown or repeated
/// names, for n == 0 or for metrics outside [0,1].
EvaluationReport build_report(std::vector<ConditionMetrics> rows, std::string model_digest,
                              std::string dataset_digest);

/// CSV with `kReportCsvHeader`, LF endings, values printed with 17
/// significant digits so parsing restores them exactly.
std::string render_csv(const EvaluationReport& report);
std::vector<ConditionMetrics> parse_csv(std::string_view csv);

/// Aligned text table: accuracy and confidence as percentages with one
/// decimal, AUROC with three decimals.
std::string render_table(const EvaluationReport& report);

}  // namespace advml
