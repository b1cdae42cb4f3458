#include "sma/attention.hpp"

#include <cmath>

#include "sma/ops.hpp"

namespace sma {

namespace {

void check_input(const Tensor& input, const SmaConfig& cfg) {
  if (input.rank() != 4) throw DimensionError("sma: feature block must be [B,C,H,W], got " + shape_str(input.shape()));
  if (input.dim(1) != cfg.in_channels) {
    throw DimensionError("sma: block configured for " + std::to_string(cfg.in_channels) +
                         " channels, input has " + std::to_string(input.dim(1)));
  }
}

}  // namespace

void SmaConfig::validate() const {
  if (n_channels == 0) throw ConfigError("sma: n_channels must be >= 1");
  if (in_channels == 0) throw ConfigError("sma: in_channels must be >= 1");
  if (attn_kernel % 2 == 0) throw ConfigError("sma: attn_kernel must be odd");
  if (mapping_kernel % 2 == 0) throw ConfigError("sma: mapping_kernel must be odd");
  if (!(delta >= 0.0 && delta < 1.0)) throw ConfigError("sma: delta must lie in [0,1)");
}

SmaParams SmaParams::zeros(const SmaConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.n_channels, c = cfg.in_channels;
  SmaParams p;
  if (cfg.mapping == ChannelMapping::kConv) {
    p.map_weight = Tensor::zeros({n, c, cfg.mapping_kernel, cfg.mapping_kernel}, true);
    p.map_bias = Tensor::zeros({n}, true);
  }
  if (cfg.spatial_attention) {
    p.attn_weight = Tensor::zeros({n, 1, cfg.attn_kernel, cfg.attn_kernel}, true);
    p.attn_bias = Tensor::zeros({n}, true);
  }
  if (cfg.weighting == ChannelWeighting::kAaa) {
    p.fc1_weight = Tensor::zeros({n, c}, true);
    p.fc1_bias = Tensor::zeros({n}, true);
    p.fc2_weight = Tensor::zeros({n, n}, true);
    p.fc2_bias = Tensor::zeros({n}, true);
  }
  return p;
}

SmaParams SmaParams::uniform(const SmaConfig& cfg, Rng& rng, double scale) {
  SmaParams p = zeros(cfg);
  for (auto& [name, t] : p.named()) {
    auto v = t.mutable_data();
    for (auto& x : v) x = rng.uniform(-scale, scale);
  }
  return p;
}

SmaParams SmaParams::fan_in(const SmaConfig& cfg, Rng& rng) {
  SmaParams p = zeros(cfg);
  const std::size_t c = cfg.in_channels, n = cfg.n_channels;
  const auto fill = [&rng](Tensor& t, std::size_t fan, double shift) {
    if (!t.defined()) return;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan));
    for (auto& x : t.mutable_data()) x = rng.uniform(-bound, bound) + shift;
  };
  fill(p.map_weight, c * cfg.mapping_kernel * cfg.mapping_kernel, 0.0);
  fill(p.map_bias, c * cfg.mapping_kernel * cfg.mapping_kernel, cfg.spatial_attention ? 0.0 : kAttentionBiasInit);
  fill(p.attn_weight, cfg.attn_kernel * cfg.attn_kernel, 0.0);
  fill(p.attn_bias, cfg.attn_kernel * cfg.attn_kernel, kAttentionBiasInit);
  fill(p.fc1_weight, c, 0.0);
  fill(p.fc1_bias, c, 0.0);
  fill(p.fc2_weight, n, 0.0);
  fill(p.fc2_bias, n, 0.0);
  return p;
}

std::vector<std::pair<std::string, Tensor>> SmaParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto push = [&](const char* name, const Tensor& t) {
    if (t.defined()) out.emplace_back(name, t);
  };
  push("map.weight", map_weight);
  push("map.bias", map_bias);
  push("attn.weight", attn_weight);
  push("attn.bias", attn_bias);
  push("fc1.weight", fc1_weight);
  push("fc1.bias", fc1_bias);
  push("fc2.weight", fc2_weight);
  push("fc2.bias", fc2_bias);
  return out;
}

Tensor AttentionStack::attended(const Tensor& input, std::size_t n) const {
  return mul(input, slice(masks, 1, n, 1));
}

AttentionStack f2a_forward(const Tensor& input, const SmaConfig& cfg, const SmaParams& params) {
  cfg.validate();
  check_input(input, cfg);
  const std::size_t n = cfg.n_channels;
  AttentionStack stack;
  if (cfg.mapping == ChannelMapping::kConv) {
    stack.mapped = conv2d(input, params.map_weight, params.map_bias,
                          {.stride = 1, .padding = same_padding(cfg.mapping_kernel), .groups = 1});
  } else {
    const Tensor pooled = avg_pool(input, {1});
    stack.mapped = n == 1 ? pooled : concat(std::vector<Tensor>(n, pooled), 1);
  }
  if (cfg.spatial_attention) {
    // One 1 -> 1 filter per attention channel, i.e. a grouped convolution.
    stack.logits = conv2d(stack.mapped, params.attn_weight, params.attn_bias,
                          {.stride = 1, .padding = same_padding(cfg.attn_kernel), .groups = n});
  } else {
    stack.logits = stack.mapped;
  }
  stack.masks = sigmoid(stack.logits);
  return stack;
}

Tensor aaa_forward(const Tensor& input, const SmaParams& params) {
  if (input.rank() != 4) throw DimensionError("aaa: feature block must be [B,C,H,W]");
  const Tensor pooled = reshape(avg_pool(input, {2, 3}), {input.dim(0), input.dim(1)});
  const Tensor hidden = linear(pooled, params.fc1_weight, params.fc1_bias);
  return softmax(linear(hidden, params.fc2_weight, params.fc2_bias), 1);
}

Tensor combine(const AttentionStack& stack, const Tensor& channel_weights, const SmaConfig& cfg,
               const Tensor& input) {
  const std::size_t b = stack.masks.dim(0), n = stack.masks.dim(1);
  if (channel_weights.rank() != 2 || channel_weights.dim(0) != b || channel_weights.dim(1) != n) {
    throw DimensionError("combine: channel weights " + shape_str(channel_weights.shape()) +
                         " do not match attention stack " + shape_str(stack.masks.shape()));
  }
  Tensor source;
  switch (cfg.combine_on) {
    case CombineOn::kLogits:
      source = stack.logits;
      break;
    case CombineOn::kMasks:
      source = stack.masks;
      break;
    case CombineOn::kAttendedFeatures:
      if (!input.defined()) throw DimensionError("combine: attended-feature mode needs the input block");
      source = mul(avg_pool(input, {1}), stack.masks);
      break;
  }
  const Tensor weighted = mul(source, reshape(channel_weights, {b, n, 1, 1}));
  return sigmoid(sum_axes(weighted, {1}));
}

Tensor refine(const Tensor& fused, const Tensor& input) {
  if (fused.rank() != 4 || input.rank() != 4 || fused.dim(1) != 1 || fused.dim(0) != input.dim(0) ||
      fused.dim(2) != input.dim(2) || fused.dim(3) != input.dim(3)) {
    throw DimensionError("refine: map " + shape_str(fused.shape()) + " does not fit block " +
                         shape_str(input.shape()));
  }
  return mul(fused, input);
}

SmaOutput sma_block_forward(const Tensor& input, const SmaConfig& cfg, const SmaParams& params) {
  SmaOutput out;
  out.stack = f2a_forward(input, cfg, params);
  if (cfg.weighting == ChannelWeighting::kAaa) {
    out.channel_weights = aaa_forward(input, params);
  } else {
    out.channel_weights = Tensor::full({input.dim(0), cfg.n_channels}, 1.0 / static_cast<double>(cfg.n_channels));
  }
  out.fused = combine(out.stack, out.channel_weights, cfg, input);
  out.refined = refine(out.fused, input);
  return out;
}

std::size_t param_count(const SmaConfig& cfg) {
  const std::size_t n = cfg.n_channels, c = cfg.in_channels;
  std::size_t total = 0;
  if (cfg.mapping == ChannelMapping::kConv) total += c * n * cfg.mapping_kernel * cfg.mapping_kernel + n;
  if (cfg.spatial_attention) total += n * (cfg.attn_kernel * cfg.attn_kernel + 1);
  if (cfg.weighting == ChannelWeighting::kAaa) total += c * n + n + n * n + n;
  return total;
}

}  // namespace sma
