#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sma/attention.hpp"
#include "sma/random.hpp"
#include "sma/tensor.hpp"

namespace sma {

enum class Task { kMultiLabel, kMultiClass };

struct LossConfig {
  double alpha = 0.1;   // weight of the diversity term
  double lambda = 0.1;  // weight of the multi-attention term
  double delta = 0.5;
  Task task = Task::kMultiLabel;
  std::vector<double> pos_weights;  // one per label, multi-label only

  void validate(std::size_t num_outputs) const;
};

/// Ground truth for a batch: a [B,L] 0/1 tensor or B class ids.
struct Targets {
  Tensor labels;
  std::vector<std::size_t> classes;
};

/// Mean over (b, n, h, w) of m_n * max(0, max_{k != n} m_k - delta). Zero for
/// a single channel.
Tensor diversity_loss(const Tensor& masks, double delta);

/// Mean over batch and labels of -w_l [y log s(x) + (1-y) log(1-s(x))],
/// evaluated as w_l (max(x,0) - x y + log1p(exp(-|x|))).
Tensor weighted_bce_logits(const Tensor& logits, const Tensor& labels, std::span<const double> weights);

/// Mean over batch of logsumexp(x) - x[class].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> classes);

/// Classification loss selected by cfg.task.
Tensor task_loss(const Tensor& logits, const Targets& targets, const LossConfig& cfg);

/// One global-average-pool + affine classifier per attention channel.
struct BypassHeads {
  std::vector<Tensor> weights;  // [outputs, C]
  std::vector<Tensor> biases;   // [outputs]

  static BypassHeads zeros(std::size_t channels, std::size_t in_features, std::size_t outputs);
  static BypassHeads uniform(std::size_t channels, std::size_t in_features, std::size_t outputs,
                             Rng& rng, double scale);
  std::size_t size() const { return weights.size(); }
  std::size_t param_count() const;
  std::vector<std::pair<std::string, Tensor>> named() const;
};

/// Average over channels of the task loss of each channel's head applied to
/// the pooled attended feature avg_pool(I * m_n).
Tensor multi_attention_loss(const AttentionStack& stack, const Tensor& input, const Targets& targets,
                            const BypassHeads& heads, const LossConfig& cfg);

/// l_cla + alpha l_div + lambda l_ma.
Tensor total_loss(const Tensor& classification, const Tensor& diversity, const Tensor& multi_attention,
                  const LossConfig& cfg);

/// clamp(negatives / positives, 1, 10) per label.
std::vector<double> positive_class_weights(std::span<const std::size_t> positives, std::size_t total);

}  // namespace sma
