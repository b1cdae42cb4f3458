#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sma/tensor.hpp"

namespace sma {

struct LabelCount {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  bool operator==(const LabelCount&) const = default;
};

/// Per-label confusion counts; merging is element-wise addition.
class LabelCounts {
 public:
  explicit LabelCounts(std::size_t num_labels = 0) : counts_(num_labels) {}

  /// preds and truth are [B,L] 0/1 tensors (or flat B*L spans).
  void add(std::span<const std::uint8_t> preds, std::span<const std::uint8_t> truth);
  void merge(const LabelCounts& other);

  std::size_t size() const { return counts_.size(); }
  const LabelCount& operator[](std::size_t l) const { return counts_[l]; }
  LabelCount& operator[](std::size_t l) { return counts_[l]; }

 private:
  std::vector<LabelCount> counts_;
};

struct LabelScore {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct F1Report {
  std::vector<LabelScore> per_label;
  double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
};

/// F1 = 2PR/(P+R) with every 0/0 taken as 0; macro values are unweighted means.
F1Report f1_scores(const LabelCounts& counts);

/// 1 where logit > threshold (strict).
std::vector<std::uint8_t> binarize(std::span<const double> logits, double threshold = 0.0);

/// Row-wise argmax of [B,K] logits, first maximum wins.
std::vector<std::size_t> argmax_rows(const Tensor& logits);

/// M[truth][pred] counts.
using ConfusionMatrix = std::vector<std::vector<std::size_t>>;
ConfusionMatrix confusion_matrix(std::span<const std::size_t> preds, std::span<const std::size_t> truth,
                                 std::size_t k);
double accuracy(const ConfusionMatrix& m);

/// "label,precision,recall,f1" rows plus a final "macro" row.
std::string format_f1_csv(const F1Report& report);
/// One line per truth class, space-separated counts.
std::string format_confusion(const ConfusionMatrix& m);

}  // namespace sma
