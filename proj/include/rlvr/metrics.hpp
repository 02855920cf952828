#pragma once

/**
 * Evaluation metrics for imbalanced classification plus generation-quality
 * proxies.
 *
 * Invalid predictions occupy a reserved extra column: they are never correct
 * and participate in the predicted marginals for Cohen's Kappa, but are not a
 * class of their own for BACC or macro averages.
 *
 * Averaging conventions (documented, the underlying papers are silent):
 * - BACC averages recall over classes with at least one gold example.
 * - Macro F1 covers classes with any gold or any predicted count; classes
 *   absent from both sides are excluded.
 */

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "rlvr/common.hpp"
#include "rlvr/verify.hpp"

namespace rlvr::metrics {

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes)
      : num_classes_(num_classes),
        counts_(static_cast<std::size_t>(num_classes) * num_classes, 0),
        invalid_(static_cast<std::size_t>(num_classes), 0) {
    if (num_classes < 1) {
      throw InputError("confusion matrix needs at least one class");
    }
  }

  int num_classes() const { return num_classes_; }

  void add(int gold, int pred, long count = 1) {
    check_class(gold);
    check_class(pred);
    counts_[static_cast<std::size_t>(gold) * num_classes_ + pred] += count;
  }

  void add_invalid(int gold, long count = 1) {
    check_class(gold);
    invalid_[static_cast<std::size_t>(gold)] += count;
  }

  long at(int gold, int pred) const {
    check_class(gold);
    check_class(pred);
    return counts_[static_cast<std::size_t>(gold) * num_classes_ + pred];
  }

  long invalid_count(int gold) const {
    check_class(gold);
    return invalid_[static_cast<std::size_t>(gold)];
  }

  long gold_total(int c) const {
    long n = 0;
    for (int p = 0; p < num_classes_; ++p) {
      n += at(c, p);
    }
    return n + invalid_count(c);
  }

  long pred_total(int c) const {
    long n = 0;
    for (int g = 0; g < num_classes_; ++g) {
      n += at(g, c);
    }
    return n;
  }

  long invalid_total() const {
    long n = 0;
    for (long x : invalid_) {
      n += x;
    }
    return n;
  }

  long total() const {
    long n = 0;
    for (long x : counts_) {
      n += x;
    }
    return n + invalid_total();
  }

 private:
  void check_class(int c) const {
    if (c < 0 || c >= num_classes_) {
      throw InputError("class index out of range: " + std::to_string(c));
    }
  }

  int num_classes_;
  std::vector<long> counts_;
  std::vector<long> invalid_;
};

struct ClassificationScores {
  double bacc = 0.0;
  double macro_f1 = 0.0;
  double kappa = 0.0;
  std::vector<double> per_class_f1;  // NaN for excluded classes
  bool kappa_degenerate = false;     // p_e == 1, kappa pinned to 0
};

inline ClassificationScores classification_suite(const ConfusionMatrix& cm) {
  const long n = cm.total();
  if (n <= 0) {
    throw InputError("confusion matrix is empty");
  }
  const int c = cm.num_classes();
  ClassificationScores out;
  out.per_class_f1.assign(static_cast<std::size_t>(c), std::nan(""));

  double recall_sum = 0.0;
  int recall_classes = 0;
  double f1_sum = 0.0;
  int f1_classes = 0;
  for (int k = 0; k < c; ++k) {
    const long gold = cm.gold_total(k);
    const long pred = cm.pred_total(k);
    const long tp = cm.at(k, k);
    if (gold > 0) {
      recall_sum += static_cast<double>(tp) / static_cast<double>(gold);
      ++recall_classes;
    }
    if (gold > 0 || pred > 0) {
      // F1 = 2*tp / (gold + pred); 0 when tp == 0.
      const double f1 = tp > 0 ? 2.0 * static_cast<double>(tp) / static_cast<double>(gold + pred)
                               : 0.0;
      out.per_class_f1[static_cast<std::size_t>(k)] = f1;
      f1_sum += f1;
      ++f1_classes;
    }
  }
  out.bacc = recall_classes > 0 ? recall_sum / recall_classes : 0.0;
  out.macro_f1 = f1_classes > 0 ? f1_sum / f1_classes : 0.0;

  // Kappa marginals include the invalid column on the predicted side.
  double po = 0.0;
  double pe = 0.0;
  for (int k = 0; k < c; ++k) {
    po += static_cast<double>(cm.at(k, k));
    pe += static_cast<double>(cm.gold_total(k)) * static_cast<double>(cm.pred_total(k));
  }
  po /= static_cast<double>(n);
  pe /= static_cast<double>(n) * static_cast<double>(n);
  if (pe >= 1.0 - 1e-15) {
    out.kappa = 0.0;
    out.kappa_degenerate = true;
  } else {
    out.kappa = (po - pe) / (1.0 - pe);
  }
  return out;
}

inline double exact_match_accuracy(std::span<const verify::ParsedOutput> predictions,
                                   std::span<const std::string> golds,
                                   const verify::AnswerKind& kind) {
  if (predictions.size() != golds.size()) {
    throw InputError("prediction and gold counts differ");
  }
  if (predictions.empty()) {
    return 0.0;
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    sum += verify::reward(predictions[i], golds[i], kind);
  }
  return sum / static_cast<double>(predictions.size());
}

struct ReasoningLengthStats {
  double mean = 0.0;
  double median = 0.0;
  long valid_count = 0;
  long invalid_count = 0;
};

inline long count_words(std::string_view text) {
  long words = 0;
  bool in_word = false;
  for (char ch : text) {
    const bool space = ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r';
    if (!space && !in_word) {
      ++words;
    }
    in_word = !space;
  }
  return words;
}

/// Think-span lengths in whitespace-delimited tokens. Invalid outputs are
/// excluded from mean/median but counted separately.
inline ReasoningLengthStats reasoning_length_stats(std::span<const verify::ParsedOutput> outputs) {
  ReasoningLengthStats stats;
  std::vector<long> lens;
  for (const auto& p : outputs) {
    if (!p.format_valid) {
      ++stats.invalid_count;
      continue;
    }
    lens.push_back(count_words(p.reasoning));
    ++stats.valid_count;
  }
  if (lens.empty()) {
    return stats;
  }
  double sum = 0.0;
  for (long v : lens) {
    sum += static_cast<double>(v);
  }
  stats.mean = sum / static_cast<double>(lens.size());
  std::sort(lens.begin(), lens.end());
  const std::size_t m = lens.size() / 2;
  stats.median = lens.size() % 2 == 1
                     ? static_cast<double>(lens[m])
                     : 0.5 * static_cast<double>(lens[m - 1] + lens[m]);
  return stats;
}

}  // namespace rlvr::metrics
