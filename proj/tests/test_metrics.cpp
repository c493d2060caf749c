// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <vector>

#include "tinynlp/common.hpp"
#include "tinynlp/metrics.hpp"

using namespace tinynlp;

TEST(Accuracy, AllCorrect) {
  std::vector<int> p{0, 1, 2}, g{0, 1, 2};
  EXPECT_DOUBLE_EQ(accuracy(p, g), 1.0);
}

TEST(Accuracy, HandCountedHalf) {
  std::vector<int> p{1, 0, 1, 1}, g{1, 1, 1, 0};
  EXPECT_DOUBLE_EQ(accuracy(p, g), 0.5);
}

TEST(Accuracy, EmptyInputRejected) {
  std::vector<int> e;
  EXPECT_THROW(accuracy(e, e), DataError);
}

TEST(MacroF1, PerfectBinaryPredictions) {
  std::vector<int> p{0, 1, 0, 1}, g{0, 1, 0, 1};
  EXPECT_DOUBLE_EQ(macro_f1(p, g, 2).value, 1.0);
}

TEST(MacroF1, HandConfusionMatrixCase) {
  // golds (1,1,0,0), preds all 1: class1 f1 = 2/3, class0 f1 = 0, macro = 1/3.
  std::vector<int> p{1, 1, 1, 1}, g{1, 1, 0, 0};
  MacroF1 r = macro_f1(p, g, 2);
  EXPECT_DOUBLE_EQ(r.per_class[1].f1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.per_class[0].f1, 0.0);
  EXPECT_DOUBLE_EQ(r.value, 1.0 / 3.0);
}

TEST(MacroF1, AbsentDeclaredClassesCountInMean) {
  std::vector<int> p{0, 0}, g{0, 0};
  MacroF1 r = macro_f1(p, g, 4);
  EXPECT_DOUBLE_EQ(r.value, 0.25);  // one perfect class, three 0/0 classes
}

TEST(MacroF1, OutOfRangeLabelRejected) {
  std::vector<int> p{0, 3}, g{0, 1};
  EXPECT_THROW(macro_f1(p, g, 2), LabelError);
}

TEST(MacroF1, PermutationInvariant) {
  RngStream rng(5);
  std::vector<int> p, g;
  for (int i = 0; i < 200; ++i) {
    p.push_back(static_cast<int>(rng.next_below(5)));
    g.push_back(static_cast<int>(rng.next_below(5)));
  }
  MacroF1 base = macro_f1(p, g, 5);
  double base_acc = accuracy(p, g);
  std::vector<int> order(p.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  shuffle(order, rng);
  std::vector<int> ps, gs;
  for (int i : order) {
    ps.push_back(p[static_cast<std::size_t>(i)]);
    gs.push_back(g[static_cast<std::size_t>(i)]);
  }
  EXPECT_DOUBLE_EQ(macro_f1(ps, gs, 5).value, base.value);
  EXPECT_DOUBLE_EQ(accuracy(ps, gs), base_acc);
}

TEST(MacroF1, AgreesWithBruteForceOracle) {
  // Independent oracle: per class, recount over the whole list with
  // explicit passes instead of a shared confusion matrix.
  RngStream rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 2 + static_cast<int>(rng.next_below(14));
    const int n = 1 + static_cast<int>(rng.next_below(40));
    std::vector<int> p, g;
    for (int i = 0; i < n; ++i) {
      p.push_back(static_cast<int>(rng.next_below(static_cast<std::uint64_t>(k))));
      g.push_back(static_cast<int>(rng.next_below(static_cast<std::uint64_t>(k))));
    }
    double oracle_sum = 0.0;
    for (int c = 0; c < k; ++c) {
      int tp = 0, predicted = 0, actual = 0;
      for (int i = 0; i < n; ++i) {
        tp += p[static_cast<std::size_t>(i)] == c && g[static_cast<std::size_t>(i)] == c;
        predicted += p[static_cast<std::size_t>(i)] == c;
        actual += g[static_cast<std::size_t>(i)] == c;
      }
      const double prec = predicted == 0 ? 0.0 : static_cast<double>(tp) / predicted;
      const double rec = actual == 0 ? 0.0 : static_cast<double>(tp) / actual;
      oracle_sum += (prec + rec) == 0.0 ? 0.0 : 2 * prec * rec / (prec + rec);
    }
    EXPECT_NEAR(macro_f1(p, g, k).value, oracle_sum / k, 1e-12);
  }
}

TEST(SelectBest, SingleRecord) {
  std::vector<MetricsRecord> recs{{3, "dev", "irony", 0.9, 0.8, {}}};
  EXPECT_EQ(select_best(recs), 3);
}

TEST(SelectBest, TieGoesToEarlierEpoch) {
  std::vector<MetricsRecord> recs{
      {1, "dev", "t", 0.5, 0.5, {}}, {2, "dev", "t", 0.8, 0.8, {}}, {3, "dev", "t", 0.8, 0.8, {}}};
  EXPECT_EQ(select_best(recs), 2);
}

TEST(SelectBest, IgnoresNonDevAndRejectsEmpty) {
  std::vector<MetricsRecord> recs{{1, "train", "t", 1.0, 1.0, {}}};
  EXPECT_THROW(select_best(recs), DataError);
}

TEST(SelectBest, ReturnedEpochDominatesRandomTraces) {
  RngStream rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<MetricsRecord> recs;
    const int n = 1 + static_cast<int>(rng.next_below(20));
    for (int e = 1; e <= n; ++e) {
      recs.push_back({e, "dev", "t", rng.next_double(), rng.next_double(), {}});
    }
    const int best = select_best(recs);
    double best_f1 = 0;
    for (const auto& r : recs) {
      if (r.epoch == best) best_f1 = r.macro_f1;
    }
    for (const auto& r : recs) EXPECT_LE(r.macro_f1, best_f1);
  }
}

TEST(MetricsIo, LineRoundTripPreservesSelection) {
  RngStream rng(13);
  std::vector<MetricsRecord> recs;
  for (int e = 1; e <= 12; ++e) {
    MetricsRecord r{e, "dev", "irony", rng.next_double(), rng.next_double(), {}};
    r.per_class = {{rng.next_double(), rng.next_double(), rng.next_double()},
                   {rng.next_double(), rng.next_double(), rng.next_double()}};
    recs.push_back(r);
  }
  std::string text = serialize_metrics(recs);
  auto parsed = parse_metrics(text);
  ASSERT_EQ(parsed.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(parsed[i].epoch, recs[i].epoch);
    EXPECT_EQ(parsed[i].macro_f1, recs[i].macro_f1);  // exact round-trip
    EXPECT_EQ(parsed[i].accuracy, recs[i].accuracy);
  }
  EXPECT_EQ(select_best(parsed), select_best(recs));
}

TEST(MetricsIo, ParsesFullScaleReferenceFixture) {
  // Known-good full-scale reference metrics, used only to regression-test
  // the parser; desk-scale runs are not expected to reach these numbers.
  const std::string fixture =
      "20\tdev\tgru-baseline\t0.7370\t0.7347\t\n"
      "20\tdev\tencoder-st\t0.8164\t0.8162\t\n"
      "20\tdev\tencoder-mt4\t0.8189\t0.8187\t\n"
      "20\tdev\tencoder-mt5\t0.8362\t0.8359\t\n"
      "20\tdev\tencoder-mt6\t0.8387\t0.8387\t\n"
      "20\tdev\tencoder-1m-mt5\t0.8437\t0.8434\t\n"
      "20\tdev\tencoder-1m-mt6\t0.8362\t0.8360\t\n";
  auto parsed = parse_metrics(fixture);
  ASSERT_EQ(parsed.size(), 7u);
  EXPECT_DOUBLE_EQ(parsed[0].macro_f1, 0.7347);
  EXPECT_DOUBLE_EQ(parsed[5].macro_f1, 0.8434);
  EXPECT_EQ(parsed[4].task, "encoder-mt6");
}
