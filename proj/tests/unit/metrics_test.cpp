#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <numeric>
#include <random>

#include "exprnet/metrics.hpp"

using exprnet::ConfusionMatrix;

namespace {

struct Sample {
  std::vector<int> preds, labels;
};

Sample random_sample(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_int_distribution<int> cls(0, 6);
  Sample s;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = cls(gen);
    s.labels.push_back(y);
    // Bias towards the truth so the matrix is not uniform.
    s.preds.push_back(gen() % 3 == 0 ? y : cls(gen));
  }
  return s;
}

// Second counter, written without ConfusionMatrix: per-class tp/fp/fn.
struct ClassTally {
  std::array<long, 7> tp{}, fp{}, fn{}, support{};
};

ClassTally tally(const Sample& s) {
  ClassTally t;
  for (std::size_t i = 0; i < s.preds.size(); ++i) {
    const int p = s.preds[i], y = s.labels[i];
    ++t.support[y];
    if (p == y) {
      ++t.tp[y];
    } else {
      ++t.fp[p];
      ++t.fn[y];
    }
  }
  return t;
}

double oracle_f1(const ClassTally& t, int c) {
  const double p = t.tp[c] + t.fp[c] == 0 ? 0.0 : double(t.tp[c]) / double(t.tp[c] + t.fp[c]);
  const double r = t.tp[c] + t.fn[c] == 0 ? 0.0 : double(t.tp[c]) / double(t.tp[c] + t.fn[c]);
  return p + r == 0 ? 0.0 : 2 * p * r / (p + r);
}

}  // namespace

TEST(Confusion, HandCount) {
  const std::vector<int> preds{0, 1, 1, 2}, labels{0, 1, 2, 2};
  const auto cm = exprnet::confusion_matrix(preds, labels);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j) {
      const bool one = (i == 0 && j == 0) || (i == 1 && j == 1) || (i == 2 && j == 1) || (i == 2 && j == 2);
      EXPECT_EQ(cm.at(i, j), one ? 1 : 0) << i << "," << j;
    }
  EXPECT_EQ(cm.total(), 4);
  EXPECT_DOUBLE_EQ(exprnet::accuracy(cm), 0.75);
}

TEST(Confusion, PerfectIsDiagonal) {
  const auto s = random_sample(500, 1);
  const auto cm = exprnet::confusion_matrix(s.labels, s.labels);
  const auto t = tally(Sample{s.labels, s.labels});
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(cm.row_sum(i), t.support[i]);
    for (std::size_t j = 0; j < 7; ++j) EXPECT_EQ(cm.at(i, j), i == j ? t.support[i] : 0);
  }
  const auto f1 = exprnet::f1_scores(cm);
  EXPECT_EQ(exprnet::accuracy(cm), 1.0);
  for (double v : f1.per_class) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(f1.macro, 1.0);
  EXPECT_DOUBLE_EQ(f1.weighted, 1.0);
}

TEST(Confusion, MatchesIndependentCounter) {
  const auto s = random_sample(10000, 2);
  const auto cm = exprnet::confusion_matrix(s.preds, s.labels);
  std::array<std::array<long, 7>, 7> counts{};
  for (std::size_t i = 0; i < s.preds.size(); ++i) ++counts[s.labels[i]][s.preds[i]];
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j) EXPECT_EQ(cm.at(i, j), counts[i][j]);
  EXPECT_EQ(cm.total(), 10000);
}

TEST(Confusion, Errors) {
  const std::vector<int> a{0, 1}, b{0};
  EXPECT_THROW(exprnet::confusion_matrix(a, b), exprnet::ValueError);
  const std::vector<int> bad{7}, ok{0}, neg{-1};
  EXPECT_THROW(exprnet::confusion_matrix(bad, ok), exprnet::ValueError);
  EXPECT_THROW(exprnet::confusion_matrix(ok, neg), exprnet::ValueError);
  EXPECT_THROW(exprnet::accuracy(ConfusionMatrix{}), exprnet::ValueError);
  EXPECT_THROW(exprnet::f1_scores(ConfusionMatrix{}), exprnet::ValueError);
  const std::vector<int> none;
  EXPECT_THROW(exprnet::score_predictions(none, none), exprnet::DataError);
}

TEST(F1, HandExampleAgainstOracle) {
  const Sample s{{0, 1, 1, 2}, {0, 1, 2, 2}};
  const auto f1 = exprnet::f1_scores(exprnet::confusion_matrix(s.preds, s.labels));
  const std::array<double, 7> expected{1.0, 2.0 / 3, 2.0 / 3, 0, 0, 0, 0};
  const auto t = tally(s);
  for (int c = 0; c < 7; ++c) {
    EXPECT_NEAR(f1.per_class[c], expected[c], 1e-15);
    EXPECT_NEAR(f1.per_class[c], oracle_f1(t, c), 1e-15);
  }
  EXPECT_NEAR(f1.macro, (1.0 + 4.0 / 3) / 7, 1e-15);
  // weighted: supports 1, 1, 2 over 4 samples
  EXPECT_NEAR(f1.weighted, (1.0 + 2.0 / 3 + 2 * 2.0 / 3) / 4, 1e-15);
}

TEST(F1, HalfPrecisionHalfRecall) {
  // class 0: tp 1, fp 1, fn 1
  const std::vector<int> preds{0, 0, 1}, labels{0, 1, 0};
  const auto f1 = exprnet::f1_scores(exprnet::confusion_matrix(preds, labels));
  EXPECT_DOUBLE_EQ(f1.per_class[0], 0.5);
}

TEST(F1, RandomAgainstOracleAndInvariants) {
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    const auto s = random_sample(3000, seed);
    const auto cm = exprnet::confusion_matrix(s.preds, s.labels);
    const auto f1 = exprnet::f1_scores(cm);
    const auto t = tally(s);
    double macro = 0, weighted = 0;
    for (int c = 0; c < 7; ++c) {
      EXPECT_NEAR(f1.per_class[c], oracle_f1(t, c), 1e-12);
      EXPECT_GE(f1.per_class[c], 0.0);
      EXPECT_LE(f1.per_class[c], std::max(cm.precision(c), cm.recall(c)) + 1e-15);
      macro += f1.per_class[c];
      weighted += double(t.support[c]) * f1.per_class[c];
    }
    EXPECT_NEAR(f1.macro, macro / 7, 1e-15);
    EXPECT_NEAR(f1.weighted, weighted / 3000.0, 1e-12);
  }
}

TEST(Metrics, InvariantUnderClassPermutation) {
  const auto s = random_sample(2000, 3);
  const auto base = exprnet::make_report(exprnet::confusion_matrix(s.preds, s.labels));
  std::mt19937_64 gen(4);
  std::array<int, 7> perm;
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 100; ++trial) {
    std::shuffle(perm.begin(), perm.end(), gen);
    Sample p;
    for (std::size_t i = 0; i < s.preds.size(); ++i) {
      p.preds.push_back(perm[s.preds[i]]);
      p.labels.push_back(perm[s.labels[i]]);
    }
    const auto r = exprnet::make_report(exprnet::confusion_matrix(p.preds, p.labels));
    EXPECT_EQ(r.accuracy, base.accuracy);
    EXPECT_NEAR(r.macro_f1, base.macro_f1, 1e-15);
    EXPECT_NEAR(r.weighted_f1, base.weighted_f1, 1e-15);
    for (int c = 0; c < 7; ++c) EXPECT_EQ(r.per_class_f1[perm[c]], base.per_class_f1[c]);
  }
}

TEST(Metrics, InvariantUnderSampleOrder) {
  auto s = random_sample(1000, 5);
  const auto base = exprnet::score_predictions(s.preds, s.labels);
  std::vector<std::size_t> idx(s.preds.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), std::mt19937_64(6));
  Sample p;
  for (auto i : idx) {
    p.preds.push_back(s.preds[i]);
    p.labels.push_back(s.labels[i]);
  }
  const auto r = exprnet::score_predictions(p.preds, p.labels);
  EXPECT_EQ(r.confusion, base.confusion);
  EXPECT_EQ(r.score, base.score);
}

TEST(Score, Equation) {
  EXPECT_EQ(exprnet::abaw2_score(1.0, 1.0), 0.33 + 0.67);
  EXPECT_NEAR(exprnet::abaw2_score(1.0, 1.0), 1.0, 1e-15);
  EXPECT_EQ(exprnet::abaw2_score(0.0, 0.0), 0.0);
  // Table 3 rounds its inputs to 0.521 / 0.33 and reports 0.4004; the formula
  // on the rounded inputs gives 0.39303.
  EXPECT_NEAR(exprnet::abaw2_score(0.521, 0.33), 0.39303, 1e-9);
  EXPECT_THROW(exprnet::abaw2_score(1.1, 0.5), exprnet::ValueError);
  EXPECT_THROW(exprnet::abaw2_score(0.5, -0.1), exprnet::ValueError);
}

TEST(Score, StrictlyIncreasing) {
  for (double a = 0.0; a < 0.99; a += 0.05) {
    for (double f = 0.0; f < 0.99; f += 0.05) {
      EXPECT_LT(exprnet::abaw2_score(a, f), exprnet::abaw2_score(a + 0.01, f));
      EXPECT_LT(exprnet::abaw2_score(a, f), exprnet::abaw2_score(a, f + 0.01));
    }
  }
}

TEST(Report, FieldsAndText) {
  const std::vector<int> preds{0, 1, 1, 2}, labels{0, 1, 2, 2};
  const auto r = exprnet::score_predictions(preds, labels);
  EXPECT_EQ(r.score, 0.33 * r.accuracy + 0.67 * r.macro_f1);
  EXPECT_EQ(r.support, (std::vector<std::int64_t>{1, 1, 2, 0, 0, 0, 0}));
  const std::string text = exprnet::format_report_text(r);
  EXPECT_EQ(text,
            "Overall Accuracy = 0.750000\n"
            "Macro F1 average = 0.333333\n"
            "Weighted F1 average = 0.750000\n"
            "Score = 0.470833\n");
  const auto j = exprnet::report_to_json(r);
  EXPECT_DOUBLE_EQ(j.at("Overall Accuracy").get<double>(), 0.75);
  EXPECT_DOUBLE_EQ(j.at("Score").get<double>(), r.score);
  EXPECT_EQ(j.at("details").at("confusion_matrix").at(2).at(1).get<int>(), 1);
  EXPECT_EQ(j.at("details").at("per_class").size(), 7u);
}
