#include <gtest/gtest.h>

#include <algorithm>

#include "sdmg/evaluation.hpp"
#include "test_support.hpp"

using namespace sdmg;
using sdmg::testing::region;
using sdmg::testing::Rng;

namespace {

struct Oracle {
  double macro = 0;
  std::size_t counted = 0;
  std::array<double, CategorySet::kCount> f1{};
};

// Full 25×25 confusion matrix, read off row and column sums.
Oracle confusion_oracle(const std::vector<int>& pred, const std::vector<int>& truth) {
  std::array<std::array<std::size_t, CategorySet::kCount>, CategorySet::kCount> m{};
  for (std::size_t i = 0; i < pred.size(); ++i) ++m[truth[i]][pred[i]];
  Oracle o;
  double sum = 0;
  for (std::size_t c = 0; c < CategorySet::kCount; ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t k = 0; k < CategorySet::kCount; ++k) {
      row += m[c][k];
      col += m[k][c];
    }
    const double tp = m[c][c];
    const double p = col ? tp / col : 0, r = row ? tp / row : 0;
    o.f1[c] = p + r > 0 ? 2 * p * r / (p + r) : 0;
    if (c % 2 == 0 && c != 0 && row + col > 0) {
      sum += o.f1[c];
      ++o.counted;
    }
  }
  o.macro = o.counted ? sum / o.counted : 0;
  return o;
}

}  // namespace

TEST(F1, AllCorrect) {
  std::vector<int> y;
  for (int c = 0; c < 25; ++c) y.push_back(c);
  const auto rep = f1_report(y, y);
  for (const auto& s : rep.per) EXPECT_EQ(s.f1, 1.0);
  EXPECT_EQ(rep.macro_f1, 1.0);
  EXPECT_EQ(rep.macro_count, 12u);
}

TEST(F1, HandCountedCategory) {
  const int c = category::kTotalValue;
  const std::vector<int> truth{c, c, c, 0, 4};
  const std::vector<int> pred{c, c, 0, c, 4};
  const auto rep = f1_report(pred, truth);
  const auto& s = rep.per[c];
  EXPECT_EQ(s.tp, 2u);
  EXPECT_EQ(s.fp, 1u);
  EXPECT_EQ(s.fn, 1u);
  EXPECT_DOUBLE_EQ(s.precision, 2.0 / 3);
  EXPECT_DOUBLE_EQ(s.recall, 2.0 / 3);
  EXPECT_DOUBLE_EQ(s.f1, 2.0 / 3);
  EXPECT_EQ(rep.macro_count, 2u);
  EXPECT_DOUBLE_EQ(rep.macro_f1, (2.0 / 3 + 1.0) / 2);
}

TEST(F1, VacuousAndSpuriousCategories) {
  const auto rep = f1_report({2, 4}, {2, 2});
  EXPECT_TRUE(rep.per[6].vacuous());
  EXPECT_EQ(rep.per[4].f1, 0.0);
  EXPECT_EQ(rep.macro_count, 2u);
  EXPECT_DOUBLE_EQ(rep.macro_f1, (2.0 / 3 + 0.0) / 2);
  EXPECT_EQ(f1_report({1, 0}, {1, 0}).macro_f1, 0.0);
  EXPECT_EQ(f1_report({}, {}).macro_count, 0u);
}

TEST(F1, KeysAndOthersStayOutOfMacro) {
  const auto rep = f1_report({1, 0, 2}, {3, 0, 2});
  EXPECT_EQ(rep.macro_count, 1u);
  EXPECT_EQ(rep.macro_f1, 1.0);
  EXPECT_EQ(rep.per[1].fp, 1u);
  EXPECT_EQ(rep.per[3].fn, 1u);
}

TEST(F1, Errors) {
  EXPECT_THROW(f1_report({1, 2}, {1}), ValidationError);
  EXPECT_THROW(f1_report({25}, {0}), ValidationError);
  EXPECT_THROW(f1_report({0}, {-1}), ValidationError);
}

TEST(F1, MatchesConfusionOracleOnRandomLabelings) {
  Rng rng(1);
  std::uniform_int_distribution<int> label(0, 24), skew(0, 6);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<int> truth(50), pred(50);
    const bool sparse = trial % 2;
    for (std::size_t i = 0; i < 50; ++i) {
      truth[i] = sparse ? skew(rng) : label(rng);
      pred[i] = rng() % 3 == 0 ? truth[i] : (sparse ? skew(rng) : label(rng));
    }
    const auto rep = f1_report(pred, truth);
    const auto o = confusion_oracle(pred, truth);
    EXPECT_NEAR(rep.macro_f1, o.macro, 1e-12);
    EXPECT_EQ(rep.macro_count, o.counted);
    for (std::size_t c = 0; c < 25; ++c) {
      EXPECT_NEAR(rep.per[c].f1, o.f1[c], 1e-12);
      for (double v : {rep.per[c].precision, rep.per[c].recall, rep.per[c].f1}) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

TEST(F1, MacroIsPermutationInvariant) {
  Rng rng(2);
  std::uniform_int_distribution<int> label(0, 24);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::pair<int, int>> pairs(50);
    for (auto& p : pairs) p = {label(rng), label(rng)};
    auto split = [](const std::vector<std::pair<int, int>>& v) {
      std::vector<int> a, b;
      for (const auto& [x, y] : v) {
        a.push_back(x);
        b.push_back(y);
      }
      return f1_report(a, b).macro_f1;
    };
    const double before = split(pairs);
    std::shuffle(pairs.begin(), pairs.end(), rng);
    EXPECT_EQ(split(pairs), before);
  }
}

TEST(F1, ReportRenderings) {
  const auto rep = f1_report({2, 2, 0}, {2, 0, 0});
  const auto j = to_json(rep);
  EXPECT_EQ(j["categories"].size(), 25u);
  EXPECT_EQ(j["categories"][2]["name"], "Store_name_value");
  EXPECT_EQ(j["macro_categories"], 1);
  const auto table = to_table(rep);
  EXPECT_NE(table.find("Store_name_value"), std::string::npos);
  EXPECT_NE(table.find("Avg."), std::string::npos);
}

TEST(Iou, Examples) {
  EXPECT_EQ(iou(region(1, 2, 3, 4), region(1, 2, 3, 4)), 1.0);
  EXPECT_EQ(iou(region(0, 0, 1, 1), region(2, 2, 1, 1)), 0.0);
  EXPECT_EQ(iou(region(0, 0, 1, 1), region(1, 0, 1, 1)), 0.0);
  EXPECT_DOUBLE_EQ(iou(region(0, 0, 1, 1), region(0.5, 0, 1, 1)), 1.0 / 3);
}

TEST(Iou, SymmetricAndBounded) {
  Rng rng(3);
  std::uniform_real_distribution<double> u(0, 10), e(0.1, 5);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = region(u(rng), u(rng), e(rng), e(rng)), b = region(u(rng), u(rng), e(rng), e(rng));
    const double v = iou(a, b);
    EXPECT_EQ(v, iou(b, a));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(TransferLabels, Examples) {
  const std::vector<TextRegion> truth{region(0, 0, 10, 10, "a", 6), region(10, 0, 10, 10, "b", 8)};
  // IOU 0.6 with the first box, 1/7 with the second.
  const auto mixed = region(2.5, 0, 10, 10);
  EXPECT_NEAR(iou(mixed, truth[0]), 0.6, 1e-12);
  EXPECT_EQ(transfer_labels_by_iou({truth[1], mixed, region(50, 50, 2, 2), region(5, 0, 10, 10)}, truth),
            (std::vector<int>{8, 6, CategorySet::kOthers, 6}));
}
