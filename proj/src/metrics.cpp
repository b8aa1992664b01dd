#include "advml/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "advml/error.hpp"

namespace advml {
namespace {

void check_rows(const Tensor& probabilities, const char* what) {
  if (probabilities.rank() != 2 || probabilities.dim(1) != 2) {
    throw ShapeError(std::string(what) + ": expected [N,2] probabilities, got " +
                     shape_string(probabilities.shape()));
  }
}

}  // namespace

double accuracy(const Tensor& probabilities, std::span<const int> labels) {
  check_rows(probabilities, "accuracy");
  if (labels.empty()) throw ValueError("accuracy: empty input");
  if (labels.size() != probabilities.dim(0)) throw ShapeError("accuracy: label count mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValueError("accuracy: labels must be binary");
    const int predicted = probabilities[2 * i + 1] > probabilities[2 * i] ? 1 : 0;
    correct += predicted == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auroc: score/label count mismatch");
  std::size_t positives = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ValueError("auroc: labels must be binary");
    positives += static_cast<std::size_t>(y);
  }
  const std::size_t negatives = labels.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw ValueError("auroc: undefined without both classes present");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Doubled mid-ranks keep every quantity an exact integer.
  double doubled_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double doubled_mid_rank = static_cast<double>(i + 1 + j);  // 2 * (i+1 + j)/2
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) doubled_rank_sum += doubled_mid_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(positives);
  const double n = static_cast<double>(negatives);
  // 2U = sum(2 * rank) - P (P + 1); AUROC = 2U / (2 P N).
  return (doubled_rank_sum - p * (p + 1.0)) / (2.0 * p * n);
}

double mean_confidence(const Tensor& probabilities) {
  check_rows(probabilities, "mean_confidence");
  const std::size_t n = probabilities.dim(0);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::max(probabilities[2 * i], probabilities[2 * i + 1]);
  return sum / static_cast<double>(n);
}

std::vector<double> positive_scores(const Tensor& probabilities) {
  check_rows(probabilities, "positive_scores");
  std::vector<double> out(probabilities.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = probabilities[2 * i + 1];
  return out;
}

ConditionMetrics evaluate_condition(std::string condition, const Tensor& probabilities,
                                    std::span<const int> labels) {
  ConditionMetrics m;
  m.condition = std::move(condition);
  m.n = labels.size();
  m.accuracy = accuracy(probabilities, labels);
  m.auroc = auroc(positive_scores(probabilities), labels);
  m.avg_confidence = mean_confidence(probabilities);
  return m;
}

EvaluationReport build_report(std::vector<ConditionMetrics> rows, std::string model_digest,
                              std::string dataset_digest) {
  auto rank_of = [](const std::string& name) -> std::size_t {
    const auto it = std::find(std::begin(kConditionOrder), std::end(kConditionOrder), name);
    if (it == std::end(kConditionOrder)) throw ValueError("unknown condition '" + name + "'");
    return static_cast<std::size_t>(it - std::begin(kConditionOrder));
  };
  std::set<std::string> present;
  for (const auto& r : rows) {
    rank_of(r.condition);
    if (!present.insert(r.condition).second) throw ValueError("condition '" + r.condition + "' repeated");
    if (r.n == 0) throw ValueError("condition '" + r.condition + "' has no samples");
    for (double v : {r.accuracy, r.auroc, r.avg_confidence}) {
      if (!(v >= 0.0 && v <= 1.0)) throw ValueError("metric outside [0,1] in '" + r.condition + "'");
    }
  }
  if (!present.contains("Clean")) throw ValueError("report requires a Clean row");
  std::stable_sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
    return rank_of(a.condition) < rank_of(b.condition);
  });
  EvaluationReport report{std::move(rows), std::move(model_digest), std::move(dataset_digest), {}};
  for (std::string_view name : kConditionOrder) {
    if (!present.contains(std::string(name))) {
      report.warnings.push_back("missing condition " + std::string(name));
    }
  }
  return report;
}

namespace {

std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw FormatError("report CSV line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

std::string render_csv(const EvaluationReport& report) {
  std::string out(kReportCsvHeader);
  out += '\n';
  for (const auto& r : report.rows) {
    out += r.condition + ',' + std::to_string(r.n) + ',' + exact(r.accuracy) + ',' + exact(r.auroc) +
           ',' + exact(r.avg_confidence) + '\n';
  }
  return out;
}

std::vector<ConditionMetrics> parse_csv(std::string_view csv) {
  std::vector<ConditionMetrics> rows;
  std::istringstream in{std::string(csv)};
  std::string line;
  if (!std::getline(in, line) || line != kReportCsvHeader) {
    throw FormatError("report CSV header must be '" + std::string(kReportCsvHeader) + "'");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream fields(line);
    for (std::string field; std::getline(fields, field, ',');) f.push_back(field);
    if (f.size() != 5) throw FormatError("report CSV line " + std::to_string(line_no) + ": expected 5 fields");
    ConditionMetrics m;
    m.condition = f[0];
    std::size_t n = 0;
    const auto [ptr, ec] = std::from_chars(f[1].data(), f[1].data() + f[1].size(), n);
    if (ec != std::errc{} || ptr != f[1].data() + f[1].size()) {
      throw FormatError("report CSV line " + std::to_string(line_no) + ": bad count");
    }
    m.n = n;
    m.accuracy = parse_double(f[2], line_no);
    m.auroc = parse_double(f[3], line_no);
    m.avg_confidence = parse_double(f[4], line_no);
    rows.push_back(std::move(m));
  }
  return rows;
}

std::string render_table(const EvaluationReport& report) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-15s %6s %9s %7s %11s\n", "Input Images", "n", "Accuracy", "AUROC",
                "Avg. Conf.");
  out += buf;
  out += std::string(52, '-') + '\n';
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%-15s %6zu %8.1f%% %7.3f %10.1f%%\n", r.condition.c_str(), r.n,
                  100.0 * r.accuracy, r.auroc, 100.0 * r.avg_confidence);
    out += buf;
  }
  return out;
}

}  // namespace advml
