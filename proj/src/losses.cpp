#include "sma/losses.hpp"

#include <algorithm>
#include <cmath>

#include "sma/ops.hpp"

namespace sma {

void LossConfig::validate(std::size_t num_outputs) const {
  if (!(alpha >= 0.0) || !(lambda >= 0.0)) throw ConfigError("loss: alpha and lambda must be >= 0");
  if (task == Task::kMultiLabel) {
    if (pos_weights.size() != num_outputs) {
      throw ConfigError("loss: expected " + std::to_string(num_outputs) + " positive-class weights, got " +
                        std::to_string(pos_weights.size()));
    }
    for (double w : pos_weights) {
      if (!(w > 0.0)) throw ConfigError("loss: positive-class weights must be > 0");
    }
  }
}

Tensor diversity_loss(const Tensor& masks, double delta) {
  if (masks.rank() != 4) throw DimensionError("diversity_loss: masks must be [B,N,H,W]");
  if (masks.dim(1) == 0) throw DimensionError("diversity_loss: no attention channels");
  if (checked_mode()) {
    for (double v : masks.data()) {
      if (!(v >= 0.0 && v <= 1.0)) throw NumericError("diversity_loss: mask value outside [0,1]");
    }
  }
  if (masks.dim(1) == 1) return Tensor::scalar(0.0);
  const Tensor others = max_over_others(masks, 1);
  return mean(mul(masks, hinge_sub(others, delta)));
}

Tensor weighted_bce_logits(const Tensor& logits, const Tensor& labels, std::span<const double> weights) {
  if (logits.rank() != 2 || logits.shape() != labels.shape()) {
    throw DimensionError("weighted_bce_logits: logits " + shape_str(logits.shape()) + " vs labels " +
                         shape_str(labels.shape()));
  }
  const std::size_t b = logits.dim(0), l = logits.dim(1);
  if (weights.size() != l) throw DimensionError("weighted_bce_logits: one weight per label required");
  auto x = logits.data(), y = labels.data();
  if (checked_mode()) {
    for (double v : y) {
      if (v != 0.0 && v != 1.0) throw NumericError("weighted_bce_logits: labels must be 0 or 1");
    }
  }
  const double count = static_cast<double>(b * l);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < l; ++j) {
      const double xv = x[i * l + j];
      total += weights[j] * (std::max(xv, 0.0) - xv * y[i * l + j] + std::log1p(std::exp(-std::abs(xv))));
    }
  }
  std::vector<double> w(weights.begin(), weights.end());
  return make_result({}, {total / count}, {logits, labels},
                     [logits, labels, w, b, l, count](const TensorNode& self) {
                       if (!logits.requires_grad()) return;
                       auto& dx = logits.node()->grad_buffer();
                       auto x = logits.data(), y = labels.data();
                       const double g = self.grad[0] / count;
                       for (std::size_t i = 0; i < b; ++i) {
                         for (std::size_t j = 0; j < l; ++j) {
                           const double xv = x[i * l + j];
                           const double s = xv >= 0.0 ? 1.0 / (1.0 + std::exp(-xv))
                                                      : std::exp(xv) / (1.0 + std::exp(xv));
                           dx[i * l + j] += g * w[j] * (s - y[i * l + j]);
                         }
                       }
                     },
                     "weighted_bce_logits");
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> classes) {
  if (logits.rank() != 2 || logits.dim(0) != classes.size()) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(classes.size()) + " targets");
  }
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  for (auto c : classes) {
    if (c >= k) throw DimensionError("cross_entropy: class index " + std::to_string(c) + " out of range");
  }
  auto x = logits.data();
  std::vector<double> probs(b * k);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = x.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(row[j] - mx) / z;
    total += mx + std::log(z) - row[classes[i]];
  }
  std::vector<std::size_t> cls(classes.begin(), classes.end());
  return make_result({}, {total / static_cast<double>(b)}, {logits},
                     [logits, probs = std::move(probs), cls = std::move(cls), b, k](const TensorNode& self) {
                       auto& dx = logits.node()->grad_buffer();
                       const double g = self.grad[0] / static_cast<double>(b);
                       for (std::size_t i = 0; i < b; ++i) {
                         for (std::size_t j = 0; j < k; ++j) {
                           dx[i * k + j] += g * (probs[i * k + j] - (j == cls[i] ? 1.0 : 0.0));
                         }
                       }
                     },
                     "cross_entropy");
}

Tensor task_loss(const Tensor& logits, const Targets& targets, const LossConfig& cfg) {
  if (cfg.task == Task::kMultiLabel) return weighted_bce_logits(logits, targets.labels, cfg.pos_weights);
  return cross_entropy(logits, targets.classes);
}

BypassHeads BypassHeads::zeros(std::size_t channels, std::size_t in_features, std::size_t outputs) {
  BypassHeads h;
  for (std::size_t n = 0; n < channels; ++n) {
    h.weights.push_back(Tensor::zeros({outputs, in_features}, true));
    h.biases.push_back(Tensor::zeros({outputs}, true));
  }
  return h;
}

BypassHeads BypassHeads::uniform(std::size_t channels, std::size_t in_features, std::size_t outputs, Rng& rng,
                                 double scale) {
  BypassHeads h = zeros(channels, in_features, outputs);
  for (auto& w : h.weights) {
    for (auto& v : w.mutable_data()) v = rng.uniform(-scale, scale);
  }
  return h;
}

std::size_t BypassHeads::param_count() const {
  std::size_t total = 0;
  for (std::size_t n = 0; n < size(); ++n) total += weights[n].numel() + biases[n].numel();
  return total;
}

std::vector<std::pair<std::string, Tensor>> BypassHeads::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t n = 0; n < size(); ++n) {
    out.emplace_back("head" + std::to_string(n) + ".weight", weights[n]);
    out.emplace_back("head" + std::to_string(n) + ".bias", biases[n]);
  }
  return out;
}

Tensor multi_attention_loss(const AttentionStack& stack, const Tensor& input, const Targets& targets,
                            const BypassHeads& heads, const LossConfig& cfg) {
  const std::size_t n = stack.channels();
  if (heads.size() != n) {
    throw DimensionError("multi_attention_loss: " + std::to_string(heads.size()) + " heads for " +
                         std::to_string(n) + " attention channels");
  }
  const std::size_t b = input.dim(0), c = input.dim(1);
  const Tensor pooled_all = masked_avg_pool(input, stack.masks);
  Tensor total;
  for (std::size_t k = 0; k < n; ++k) {
    const Tensor pooled = reshape(slice(pooled_all, 1, k, 1), {b, c});
    const Tensor loss = task_loss(linear(pooled, heads.weights[k], heads.biases[k]), targets, cfg);
    total = total.defined() ? add(total, loss) : loss;
  }
  return scale(total, 1.0 / static_cast<double>(n));
}

Tensor total_loss(const Tensor& classification, const Tensor& diversity, const Tensor& multi_attention,
                  const LossConfig& cfg) {
  return add(add(classification, scale(diversity, cfg.alpha)), scale(multi_attention, cfg.lambda));
}

std::vector<double> positive_class_weights(std::span<const std::size_t> positives, std::size_t total) {
  std::vector<double> w;
  w.reserve(positives.size());
  for (auto p : positives) {
    if (p == 0) {
      w.push_back(10.0);
      continue;
    }
    const double ratio = static_cast<double>(total - std::min(p, total)) / static_cast<double>(p);
    w.push_back(std::clamp(ratio, 1.0, 10.0));
  }
  return w;
}

}  // namespace sma
