#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>

#include "evx/error.hpp"
#include "evx/evaluation.hpp"
#include "evx/random.hpp"
#include "helpers.hpp"

namespace evx {
namespace {

// Per-class counts by brute force, straight from the definitions.
struct Oracle {
  std::vector<double> p, r, f;
  std::vector<std::size_t> support;
  double wp = 0, wr = 0, wf = 0;
};

Oracle brute_force(const std::vector<int>& t, const std::vector<int>& y, int classes) {
  Oracle o;
  std::size_t n = t.size();
  for (int c = 0; c < classes; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      tp += t[i] == c && y[i] == c;
      fp += t[i] != c && y[i] == c;
      fn += t[i] == c && y[i] != c;
    }
    const double p = tp + fp ? double(tp) / double(tp + fp) : 0.0;
    const double r = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    o.p.push_back(p);
    o.r.push_back(r);
    o.f.push_back(f);
    o.support.push_back(tp + fn);
    o.wp += p * double(tp + fn) / double(n);
    o.wr += r * double(tp + fn) / double(n);
    o.wf += f * double(tp + fn) / double(n);
  }
  return o;
}

const std::vector<std::string> kFour{"earthquake", "floods", "thunder_storm", "wildfires"};

TEST(Metrics, RandomPairsMatchBruteForce) {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(200);
    std::vector<int> t(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = static_cast<int>(rng.below(4));
      y[i] = static_cast<int>(rng.below(4));
    }
    const ClassificationReport r = compute_report(t, y, kFour);
    const Oracle o = brute_force(t, y, 4);
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_DOUBLE_EQ(r.per_class[c].precision, o.p[c]);
      EXPECT_DOUBLE_EQ(r.per_class[c].recall, o.r[c]);
      EXPECT_DOUBLE_EQ(r.per_class[c].f1, o.f[c]);
      EXPECT_EQ(r.per_class[c].support, o.support[c]);
    }
    EXPECT_NEAR(r.weighted_avg.precision, o.wp, 1e-12);
    EXPECT_NEAR(r.weighted_avg.recall, o.wr, 1e-12);
    EXPECT_NEAR(r.weighted_avg.f1, o.wf, 1e-12);
    EXPECT_EQ(r.weighted_avg.support, n);
  }
}

TEST(Metrics, HandWorkedCounts) {
  // Class 0: TP 9, FP 1, FN 1 -> P = R = F1 = 0.9.
  std::vector<int> t, y;
  for (int i = 0; i < 9; ++i) t.push_back(0), y.push_back(0);
  t.push_back(0), y.push_back(1);
  t.push_back(1), y.push_back(0);
  for (int i = 0; i < 9; ++i) t.push_back(1), y.push_back(1);
  const auto r = compute_report(t, y, {"a", "b"});
  EXPECT_DOUBLE_EQ(r.per_class[0].precision, 0.9);
  EXPECT_DOUBLE_EQ(r.per_class[0].recall, 0.9);
  EXPECT_DOUBLE_EQ(r.per_class[0].f1, 0.9);
  EXPECT_EQ(r.matrix.at(0, 1), 1u);
  EXPECT_EQ(r.matrix.at(1, 0), 1u);
  EXPECT_EQ(r.matrix.total(), 20u);
}

TEST(Metrics, F1Definition) {
  EXPECT_DOUBLE_EQ(f1_score(0.5, 1.0), 2.0 / 3.0);
  EXPECT_EQ(f1_score(0.0, 0.0), 0.0);
}

TEST(Metrics, ZeroDivisionWarns) {
  // Class 2 is never predicted and never present.
  const std::vector<int> t{0, 1, 0, 1}, y{0, 1, 1, 1};
  const auto r = compute_report(t, y, {"a", "b", "c"});
  EXPECT_EQ(r.per_class[2].precision, 0.0);
  EXPECT_EQ(r.per_class[2].recall, 0.0);
  EXPECT_EQ(r.per_class[2].f1, 0.0);
  ASSERT_FALSE(r.warnings.empty());
  EXPECT_NE(r.warnings.front().find("c"), std::string::npos);
}

TEST(Metrics, EmptyInputIsEmptySplit) {
  try {
    compute_report(std::vector<int>{}, std::vector<int>{}, {"a", "b"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySplit);
  }
}

TEST(Metrics, PermutationInvariant) {
  Rng rng(5);
  std::vector<PredictionRecord> recs;
  for (int i = 0; i < 60; ++i) {
    recs.push_back({"s" + std::to_string(i), static_cast<int>(rng.below(4)),
                    static_cast<int>(rng.below(4)), rng.uniform(0.25, 1.0)});
  }
  const auto a = build_report(recs, kFour);
  std::reverse(recs.begin(), recs.end());
  std::swap(recs[3], recs[40]);
  EXPECT_EQ(build_report(recs, kFour), a);
  EXPECT_TRUE(std::is_sorted(a.predictions.begin(), a.predictions.end(),
                             [](const auto& l, const auto& r) { return l.sample_id < r.sample_id; }));
}

TEST(Table, WeightedAverageRowVerbatim) {
  const TableRow rows[] = {{"Earthquake", 0.93, 0.88, 0.90},
                           {"Floods", 0.89, 0.91, 0.90},
                           {"Thunder Storm", 0.92, 0.93, 0.93},
                           {"Wildfires", 0.91, 0.92, 0.92},
                           {"Weighted Average", 0.91, 0.91, 0.91}};
  const std::string table = render_metrics_table(rows);
  EXPECT_NE(table.find("Weighted Average 0.91 0.91 0.91\n"), std::string::npos) << table;
  EXPECT_NE(table.find("Thunder Storm 0.92 0.93 0.93\n"), std::string::npos);
}

TEST(Table, TwoDecimalRounding) {
  const TableRow rows[] = {{"x", 0.915, 0.904999, 1.0}};
  EXPECT_NE(render_metrics_table(rows).find("x 0.92 0.90 1.00"), std::string::npos);
}

TEST(Table, ReportEndsWithWeightedAverage) {
  const std::vector<int> t{0, 1, 1}, y{0, 1, 0};
  const std::string s = render_report_table(compute_report(t, y, {"a", "b"}));
  EXPECT_NE(s.find("Weighted Average"), std::string::npos);
  EXPECT_LT(s.find("\nb "), s.find("Weighted Average"));
}

TEST(ReportJson, RoundTrip) {
  const auto dir = testing::temp_dir();
  std::vector<PredictionRecord> recs{{"a/1.png", 0, 0, 0.9}, {"b/2.png", 1, 0, 0.6},
                                     {"b/3.png", 1, 1, 0.7}};
  const auto r = build_report(recs, {"a", "b"});
  save_report(r, dir / "r.json");
  EXPECT_EQ(load_report(dir / "r.json"), r);
  EXPECT_EQ(report_from_json(report_to_json(r)), r);
}

TEST(Gallery, OrderingCountsAndCaps) {
  // Pairs: (0 -> 1) x5, (2 -> 3) x2, (1 -> 0) x2.
  std::vector<PredictionRecord> recs;
  auto add = [&](int t, int y, int n) {
    for (int i = 0; i < n; ++i) {
      recs.push_back({std::to_string(t) + std::to_string(y) + "_" + std::to_string(i), t, y,
                      0.5 + 0.01 * i});
    }
  };
  add(0, 1, 5);
  add(2, 3, 2);
  add(1, 0, 2);
  add(3, 3, 4);
  const auto r = build_report(recs, kFour);
  const Gallery g = misclassification_gallery(
      r, [](const std::string& id) { return std::optional<std::filesystem::path>("o/" + id); }, 3);
  ASSERT_EQ(g.cells.size(), 3u);
  EXPECT_EQ(g.cells[0].count, 5u);
  EXPECT_EQ(g.cells[0].entries.size(), 3u);
  EXPECT_EQ(g.cells[1].true_class, 1);  // ties by (true, predicted)
  EXPECT_EQ(g.cells[2].true_class, 2);
  for (const auto& cell : g.cells) {
    EXPECT_EQ(cell.count, r.matrix.at(cell.true_class, cell.predicted_class));
  }
  const std::string html = render_gallery_html(g);
  EXPECT_NE(html.find("<html"), std::string::npos);
  EXPECT_LT(html.find("earthquake"), html.find("thunder_storm"));
}

TEST(Gallery, MissingOverlayStillCounted) {
  std::vector<PredictionRecord> recs{{"x", 0, 1, 0.8}};
  const auto r = build_report(recs, {"a", "b"});
  const Gallery g = misclassification_gallery(
      r, [](const std::string&) { return std::optional<std::filesystem::path>(); });
  ASSERT_EQ(g.cells.size(), 1u);
  EXPECT_EQ(g.cells[0].count, 1u);
}

}  // namespace
}  // namespace evx
