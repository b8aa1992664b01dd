#include <gtest/gtest.h>

#include "advml/error.hpp"
#include "advml/metrics.hpp"
#include "advml/rng.hpp"

using namespace advml;

namespace {

// Pairwise count: positives beating negatives, ties worth one half.
double pairwise_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  long long twice = 0, pos = 0, neg = 0;
  for (int v : y) (v == 1 ? pos : neg) += 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      twice += s[i] > s[j] ? 2 : (s[i] == s[j] ? 1 : 0);
    }
  }
  return static_cast<double>(twice) / static_cast<double>(2 * pos * neg);
}

Tensor probs(std::vector<double> p1) {
  Tensor t(Shape{p1.size(), 2});
  for (std::size_t i = 0; i < p1.size(); ++i) {
    t.at({i, 0}) = 1.0 - p1[i];
    t.at({i, 1}) = p1[i];
  }
  return t;
}

ConditionMetrics row(std::string name, double acc = 0.5) { return {std::move(name), 10, acc, 0.5, 0.75}; }

}  // namespace

TEST(Auroc, MatchesPairwiseOracleExactly) {
  Rng rng = Rng::stream(2024, "auroc");
  int done = 0;
  while (done < 1000) {
    const std::size_t n = 2 + rng.uniform_int(19);
    std::vector<double> s(n);
    std::vector<int> y(n);
    // coarse scores so ties are common
    const bool coarse = rng.bernoulli(0.5);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = coarse ? static_cast<double>(rng.uniform_int(4)) / 4.0 : rng.uniform();
      y[i] = static_cast<int>(rng.uniform_int(2));
    }
    const bool both = std::count(y.begin(), y.end(), 1) > 0 && std::count(y.begin(), y.end(), 0) > 0;
    if (!both) continue;
    ASSERT_EQ(auroc(s, y), pairwise_auroc(s, y)) << "instance " << done;
    ++done;
  }
}

TEST(Auroc, KnownValues) {
  EXPECT_EQ(auroc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}), 0.75);
  EXPECT_EQ(auroc(std::vector<double>{0.5, 0.5}, std::vector<int>{0, 1}), 0.5);
  EXPECT_EQ(auroc(std::vector<double>{0.9, 0.1}, std::vector<int>{0, 1}), 0.0);
}

TEST(Auroc, ComplementSymmetry) {
  Rng rng = Rng::stream(5, "sym");
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> s(12);
    std::vector<int> y(12), flipped(12);
    for (std::size_t i = 0; i < 12; ++i) {
      s[i] = rng.uniform();
      y[i] = static_cast<int>(i % 2);
      flipped[i] = 1 - y[i];
    }
    EXPECT_NEAR(auroc(s, y) + auroc(s, flipped), 1.0, 1e-15);
  }
}

TEST(Auroc, Errors) {
  EXPECT_THROW(auroc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), ValueError);
  EXPECT_THROW(auroc(std::vector<double>{0.1}, std::vector<int>{1, 0}), ShapeError);
  EXPECT_THROW(auroc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 2}), ValueError);
}

TEST(Accuracy, ArgmaxTiesToHealthy) {
  const Tensor p = probs({0.9, 0.5, 0.2, 0.6});
  EXPECT_EQ(accuracy(p, std::vector<int>{1, 0, 0, 0}), 0.75);
  EXPECT_EQ(accuracy(p, std::vector<int>{1, 1, 0, 1}), 0.75);
  EXPECT_THROW(accuracy(p, std::vector<int>{1, 0}), ShapeError);
}

TEST(Confidence, MeanOfMaxProbability) {
  EXPECT_DOUBLE_EQ(mean_confidence(probs({0.9, 0.2})), 0.85);
  const auto s = positive_scores(probs({0.9, 0.2}));
  EXPECT_EQ(s, (std::vector<double>{0.9, 0.2}));
}

TEST(Evaluate, FillsRow) {
  const auto m = evaluate_condition("Clean", probs({0.9, 0.2, 0.7, 0.4}), std::vector<int>{1, 0, 0, 1});
  EXPECT_EQ(m.condition, "Clean");
  EXPECT_EQ(m.n, 4u);
  EXPECT_EQ(m.accuracy, 0.5);
  EXPECT_EQ(m.auroc, 0.75);  // 3 of 4 positive/negative pairs ordered
}

TEST(Report, OrdersRowsAndWarnsOnMissing) {
  auto r = build_report({row("Patch-White"), row("Clean"), row("PGD-White")}, "m", "d");
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_EQ(r.rows[0].condition, "Clean");
  EXPECT_EQ(r.rows[1].condition, "PGD-White");
  EXPECT_EQ(r.rows[2].condition, "Patch-White");
  EXPECT_EQ(r.warnings.size(), 3u);
}

TEST(Report, Errors) {
  EXPECT_THROW(build_report({row("PGD-White")}, "m", "d"), ValueError);
  EXPECT_THROW(build_report({row("Clean"), row("Clean")}, "m", "d"), ValueError);
  EXPECT_THROW(build_report({row("Clean"), row("Adversarial")}, "m", "d"), ValueError);
  EXPECT_THROW(build_report({row("Clean", 1.5)}, "m", "d"), ValueError);
  auto empty = row("Clean");
  empty.n = 0;
  EXPECT_THROW(build_report({empty}, "m", "d"), ValueError);
}

TEST(Report, CsvRoundTripIsExact) {
  Rng rng = Rng::stream(9, "csv");
  std::vector<ConditionMetrics> rows;
  for (auto name : kConditionOrder)
    rows.push_back({std::string(name), 170, rng.uniform(), rng.uniform(), rng.uniform()});
  const auto r = build_report(rows, "m", "d");
  const std::string csv = render_csv(r);
  EXPECT_EQ(csv.substr(0, kReportCsvHeader.size()), kReportCsvHeader);
  EXPECT_EQ(csv.find('\r'), std::string::npos);
  EXPECT_EQ(parse_csv(csv), r.rows);
  EXPECT_EQ(render_csv(build_report(parse_csv(csv), "m", "d")), csv);
}

TEST(Report, CsvParseErrors) {
  EXPECT_THROW(parse_csv("cond,n\nClean,1\n"), FormatError);
  EXPECT_THROW(parse_csv(std::string(kReportCsvHeader) + "\nClean,1,0.5\n"), FormatError);
  EXPECT_THROW(parse_csv(std::string(kReportCsvHeader) + "\nClean,x,0.5,0.5,0.5\n"), FormatError);
  EXPECT_THROW(parse_csv(std::string(kReportCsvHeader) + "\nClean,3,abc,0.5,0.5\n"), FormatError);
}

TEST(Report, TableFormatsPercentages) {
  auto r = build_report({{"Clean", 170, 0.976, 0.9981, 0.966}, {"PGD-White", 170, 0.0, 0.0, 0.994}}, "m", "d");
  const std::string t = render_table(r);
  EXPECT_NE(t.find("97.6%"), std::string::npos) << t;
  EXPECT_NE(t.find("0.998"), std::string::npos) << t;
  EXPECT_NE(t.find("99.4%"), std::string::npos) << t;
  EXPECT_LT(t.find("Clean"), t.find("PGD-White"));
}
