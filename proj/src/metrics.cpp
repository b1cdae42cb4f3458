#include "sma/metrics.hpp"

#include <cstdio>

namespace sma {

void LabelCounts::add(std::span<const std::uint8_t> preds, std::span<const std::uint8_t> truth) {
  if (preds.size() != truth.size() || counts_.empty() || preds.size() % counts_.size() != 0) {
    throw DimensionError("LabelCounts::add: " + std::to_string(preds.size()) + " predictions, " +
                         std::to_string(truth.size()) + " targets, " + std::to_string(counts_.size()) + " labels");
  }
  for (std::size_t i = 0; i < preds.size(); ++i) {
    LabelCount& c = counts_[i % counts_.size()];
    const bool p = preds[i] != 0, t = truth[i] != 0;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
}

void LabelCounts::merge(const LabelCounts& other) {
  if (other.size() != size()) throw DimensionError("LabelCounts::merge: label count mismatch");
  for (std::size_t l = 0; l < size(); ++l) {
    counts_[l].tp += other[l].tp;
    counts_[l].fp += other[l].fp;
    counts_[l].fn += other[l].fn;
    counts_[l].tn += other[l].tn;
  }
}

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

F1Report f1_scores(const LabelCounts& counts) {
  F1Report r;
  for (std::size_t l = 0; l < counts.size(); ++l) {
    const LabelCount& c = counts[l];
    LabelScore s;
    s.precision = ratio(c.tp, c.tp + c.fp);
    s.recall = ratio(c.tp, c.tp + c.fn);
    const double pr = s.precision + s.recall;
    s.f1 = pr == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / pr;
    r.macro_precision += s.precision;
    r.macro_recall += s.recall;
    r.macro_f1 += s.f1;
    r.per_label.push_back(s);
  }
  if (!r.per_label.empty()) {
    const double n = static_cast<double>(r.per_label.size());
    r.macro_precision /= n;
    r.macro_recall /= n;
    r.macro_f1 /= n;
  }
  return r;
}

std::vector<std::uint8_t> binarize(std::span<const double> logits, double threshold) {
  std::vector<std::uint8_t> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] > threshold ? 1 : 0;
  return out;
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2 || logits.dim(1) == 0) throw DimensionError("argmax_rows: expected [B,K] logits");
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  auto v = logits.data();
  std::vector<std::size_t> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (v[i * k + j] > v[i * k + best]) best = j;
    }
    out[i] = best;
  }
  return out;
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> preds, std::span<const std::size_t> truth,
                                 std::size_t k) {
  if (preds.size() != truth.size()) throw DimensionError("confusion_matrix: prediction/target count mismatch");
  ConfusionMatrix m(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= k || truth[i] >= k) {
      throw DimensionError("confusion_matrix: class id out of range [0, " + std::to_string(k) + ")");
    }
    ++m[truth[i]][preds[i]];
  }
  return m;
}

double accuracy(const ConfusionMatrix& m) {
  std::size_t diag = 0, total = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m[i].size(); ++j) total += m[i][j];
    diag += m[i][i];
  }
  return ratio(diag, total);
}

std::string format_f1_csv(const F1Report& report) {
  std::string out = "label,precision,recall,f1\n";
  char buf[128];
  for (std::size_t l = 0; l < report.per_label.size(); ++l) {
    const auto& s = report.per_label[l];
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f\n", l, s.precision, s.recall, s.f1);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "macro,%.6f,%.6f,%.6f\n", report.macro_precision, report.macro_recall,
                report.macro_f1);
  return out + buf;
}

std::string format_confusion(const ConfusionMatrix& m) {
  std::string out;
  for (const auto& row : m) {
    for (std::size_t j = 0; j < row.size(); ++j) out += (j ? " " : "") + std::to_string(row[j]);
    out += "\n";
  }
  return out;
}

}  // namespace sma
