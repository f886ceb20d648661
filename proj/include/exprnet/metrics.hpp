#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "exprnet/dataset.hpp"
#include "exprnet/text.hpp"

namespace exprnet {

/// Rows are true labels, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes = kNumExpressions)
      : classes_(num_classes), counts_(num_classes * num_classes, 0) {}

  std::size_t num_classes() const { return classes_; }
  std::int64_t at(std::size_t truth, std::size_t pred) const { return counts_.at(truth * classes_ + pred); }
  void add(std::size_t truth, std::size_t pred) { ++counts_.at(truth * classes_ + pred); }

  std::int64_t total() const {
    std::int64_t n = 0;
    for (auto v : counts_) n += v;
    return n;
  }
  std::int64_t trace() const {
    std::int64_t n = 0;
    for (std::size_t c = 0; c < classes_; ++c) n += at(c, c);
    return n;
  }
  /// Support of class c.
  std::int64_t row_sum(std::size_t c) const {
    std::int64_t n = 0;
    for (std::size_t j = 0; j < classes_; ++j) n += at(c, j);
    return n;
  }
  /// Number of predictions of class c.
  std::int64_t col_sum(std::size_t c) const {
    std::int64_t n = 0;
    for (std::size_t i = 0; i < classes_; ++i) n += at(i, c);
    return n;
  }
  double precision(std::size_t c) const {
    const auto d = col_sum(c);
    return d == 0 ? 0.0 : static_cast<double>(at(c, c)) / static_cast<double>(d);
  }
  double recall(std::size_t c) const {
    const auto d = row_sum(c);
    return d == 0 ? 0.0 : static_cast<double>(at(c, c)) / static_cast<double>(d);
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t classes_;
  std::vector<std::int64_t> counts_;
};

inline ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> labels,
                                        std::size_t num_classes = kNumExpressions) {
  if (preds.size() != labels.size()) {
    throw ValueError("confusion_matrix: " + std::to_string(preds.size()) + " predictions for " +
                     std::to_string(labels.size()) + " labels");
  }
  ConfusionMatrix cm(num_classes);
  const int k = static_cast<int>(num_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] >= k || labels[i] < 0 || labels[i] >= k) {
      throw ValueError("confusion_matrix: sample " + std::to_string(i) + " has prediction " + std::to_string(preds[i]) +
                       " / label " + std::to_string(labels[i]) + " outside [0," + std::to_string(k) + ")");
    }
    cm.add(static_cast<std::size_t>(labels[i]), static_cast<std::size_t>(preds[i]));
  }
  return cm;
}

inline double accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw ValueError("accuracy of an empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

struct F1Scores {
  std::vector<double> per_class;
  double macro = 0.0;
  double weighted = 0.0;
};

/// F1_c = 2 P_c R_c / (P_c + R_c), defined as 0 when P_c + R_c = 0. Macro is
/// the plain mean over every class, including classes without support.
inline F1Scores f1_scores(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw ValueError("f1 scores of an empty confusion matrix");
  F1Scores out;
  double sum = 0.0, weighted = 0.0;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    const double p = cm.precision(c), r = cm.recall(c);
    const double f1 = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    out.per_class.push_back(f1);
    sum += f1;
    weighted += static_cast<double>(cm.row_sum(c)) * f1;
  }
  out.macro = sum / static_cast<double>(cm.num_classes());
  out.weighted = weighted / static_cast<double>(total);
  return out;
}

/// Challenge composite 0.33 * accuracy + 0.67 * macro F1.
inline double abaw2_score(double accuracy_value, double macro_f1) {
  if (!(accuracy_value >= 0.0 && accuracy_value <= 1.0) || !(macro_f1 >= 0.0 && macro_f1 <= 1.0)) {
    throw ValueError("abaw2_score: accuracy and macro F1 must lie in [0,1]");
  }
  return 0.33 * accuracy_value + 0.67 * macro_f1;
}

struct MetricsReport {
  double accuracy = 0.0;
  std::vector<double> per_class_f1;
  double macro_f1 = 0.0;
  double weighted_f1 = 0.0;
  double score = 0.0;
  std::vector<std::int64_t> support;
  ConfusionMatrix confusion;
};

inline MetricsReport make_report(const ConfusionMatrix& cm) {
  MetricsReport r;
  r.accuracy = accuracy(cm);
  const F1Scores f1 = f1_scores(cm);
  r.per_class_f1 = f1.per_class;
  r.macro_f1 = f1.macro;
  r.weighted_f1 = f1.weighted;
  r.score = abaw2_score(r.accuracy, r.macro_f1);
  for (std::size_t c = 0; c < cm.num_classes(); ++c) r.support.push_back(cm.row_sum(c));
  r.confusion = cm;
  return r;
}

inline MetricsReport score_predictions(std::span<const int> preds, std::span<const int> labels,
                                       std::size_t num_classes = kNumExpressions) {
  if (preds.empty()) throw DataError("no predictions to score");
  return make_report(confusion_matrix(preds, labels, num_classes));
}

/// Flat report with exactly the four headline rows.
inline std::string format_report_text(const MetricsReport& r) {
  return "Overall Accuracy = " + format_fixed(r.accuracy, 6) + "\n" +
         "Macro F1 average = " + format_fixed(r.macro_f1, 6) + "\n" +
         "Weighted F1 average = " + format_fixed(r.weighted_f1, 6) + "\n" +
         "Score = " + format_fixed(r.score, 6) + "\n";
}

inline nlohmann::ordered_json report_to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["Overall Accuracy"] = r.accuracy;
  j["Macro F1 average"] = r.macro_f1;
  j["Weighted F1 average"] = r.weighted_f1;
  j["Score"] = r.score;
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  for (std::size_t c = 0; c < r.per_class_f1.size(); ++c) {
    const std::string name = c < kExpressionNames.size() ? std::string(kExpressionNames[c]) : "class" + std::to_string(c);
    per_class[name] = {{"f1", r.per_class_f1[c]}, {"support", r.support[c]}};
  }
  nlohmann::ordered_json matrix = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.confusion.num_classes(); ++i) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < r.confusion.num_classes(); ++k) row.push_back(r.confusion.at(i, k));
    matrix.push_back(row);
  }
  j["details"] = {{"per_class", per_class}, {"confusion_matrix", matrix}};
  return j;
}

}  // namespace exprnet
