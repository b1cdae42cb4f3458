#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "sma/random.hpp"
#include "sma/tensor.hpp"

namespace sma {

/// What the combination stage weights with T before the final sigmoid.
enum class CombineOn {
  kLogits,            // A = sigmoid(sum_n T_n z_n)
  kMasks,             // A = sigmoid(sum_n T_n m_n)
  kAttendedFeatures,  // A = sigmoid(sum_n T_n mean_c(I * m_n)), pooling over C as well
};

/// How the C input channels become the N attention channels.
enum class ChannelMapping {
  kConv,         // learned C -> N convolution (feature-to-attention channels)
  kChannelMean,  // every channel starts from mean_c(I), no diversified mapping
};

enum class ChannelWeighting { kAaa, kUniform };

struct SmaConfig {
  std::size_t n_channels = 7;
  std::size_t in_channels = 0;
  std::size_t mapping_kernel = 1;
  std::size_t attn_kernel = 7;
  double delta = 0.5;
  CombineOn combine_on = CombineOn::kLogits;
  ChannelMapping mapping = ChannelMapping::kConv;
  ChannelWeighting weighting = ChannelWeighting::kAaa;
  bool spatial_attention = true;

  /// Throws ConfigError on an even attention kernel, N == 0, delta outside [0,1).
  void validate() const;
};

inline constexpr double kAttentionBiasInit = 3.0;

/// Trainable tensors of one SMA block. Tensors for disabled stages are left
/// undefined.
struct SmaParams {
  Tensor map_weight;   // [N, C, km, km]
  Tensor map_bias;     // [N]
  Tensor attn_weight;  // [N, 1, k, k], one single-channel filter per attention channel
  Tensor attn_bias;    // [N]
  Tensor fc1_weight;   // [N, C], applied first
  Tensor fc1_bias;     // [N]
  Tensor fc2_weight;   // [N, N]
  Tensor fc2_bias;     // [N]

  static SmaParams zeros(const SmaConfig& cfg);
  /// Uniform(-scale, scale) everywhere.
  static SmaParams uniform(const SmaConfig& cfg, Rng& rng, double scale = 1e-2);
  /// Training init: Uniform(+-1/sqrt(fan_in)) per tensor, with the bias that
  /// feeds z raised by kAttentionBiasInit so A starts close to 1.
  static SmaParams fan_in(const SmaConfig& cfg, Rng& rng);

  /// Defined tensors with their registry names, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named() const;
};

struct AttentionStack {
  Tensor mapped;  // b: [B, N, H, W]
  Tensor logits;  // z: [B, N, H, W]
  Tensor masks;   // m = sigmoid(z): [B, N, H, W]

  std::size_t channels() const { return masks.dim(1); }
  /// S_n = I * m_n with the mask broadcast over C: [B, C, H, W].
  Tensor attended(const Tensor& input, std::size_t n) const;
};

struct SmaOutput {
  Tensor refined;  // O: [B, C, H, W]
  AttentionStack stack;
  Tensor channel_weights;  // T: [B, N]
  Tensor fused;            // A: [B, 1, H, W]
};

AttentionStack f2a_forward(const Tensor& input, const SmaConfig& cfg, const SmaParams& params);
/// T = softmax(fc2(fc1(avg_pool(I)))), no nonlinearity between the affine maps.
Tensor aaa_forward(const Tensor& input, const SmaParams& params);
/// `input` is only read for CombineOn::kAttendedFeatures.
Tensor combine(const AttentionStack& stack, const Tensor& channel_weights, const SmaConfig& cfg,
               const Tensor& input = {});
/// O = A * I with A broadcast over C.
Tensor refine(const Tensor& fused, const Tensor& input);
SmaOutput sma_block_forward(const Tensor& input, const SmaConfig& cfg, const SmaParams& params);

/// Trainable scalars of one block, in closed form.
std::size_t param_count(const SmaConfig& cfg);

}  // namespace sma
