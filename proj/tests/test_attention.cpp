#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sma/attention.hpp"
#include "sma/gradcheck.hpp"
#include "sma/losses.hpp"
#include "sma/ops.hpp"

using namespace sma;
using oracle::max_abs_diff;
using oracle::random_tensor;

namespace {

SmaConfig config(std::size_t c, std::size_t n) {
  SmaConfig cfg;
  cfg.in_channels = c;
  cfg.n_channels = n;
  return cfg;
}

void randomize(SmaParams& p, Rng& rng, double scale) {
  for (auto& [name, t] : p.named()) {
    for (auto& v : t.mutable_data()) v = rng.uniform(-scale, scale);
  }
}

// Permutes axis 1 of a [B,N,...] tensor.
Tensor permute_channels(const Tensor& t, const std::vector<std::size_t>& perm) {
  std::vector<Tensor> parts;
  for (auto k : perm) parts.push_back(slice(t, 1, k, 1));
  return concat(parts, 1);
}

}  // namespace

TEST(SmaConfig, Validation) {
  SmaConfig cfg = config(4, 3);
  EXPECT_NO_THROW(cfg.validate());
  cfg.attn_kernel = 6;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = config(4, 0);
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = config(4, 2);
  cfg.delta = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(F2a, ZeroParamsGiveHalfMasks) {
  Rng rng(1);
  const SmaConfig cfg = config(5, 3);
  Tensor x = random_tensor(rng, {2, 5, 6, 6});
  AttentionStack st = f2a_forward(x, cfg, SmaParams::zeros(cfg));
  for (double z : st.logits.data()) EXPECT_EQ(z, 0.0);
  for (double m : st.masks.data()) EXPECT_EQ(m, 0.5);
  Tensor s1 = st.attended(x, 1);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(s1[i], 0.5 * x[i]);
}

TEST(F2a, SaturatedBiasGivesUnitMasks) {
  Rng rng(2);
  const SmaConfig cfg = config(4, 2);
  SmaParams p = SmaParams::zeros(cfg);
  for (auto& b : p.attn_bias.mutable_data()) b = 36.0;
  Tensor x = random_tensor(rng, {1, 4, 5, 5});
  AttentionStack st = f2a_forward(x, cfg, p);
  for (double m : st.masks.data()) EXPECT_NEAR(m, 1.0, 1e-12);
  EXPECT_LT(max_abs_diff(st.attended(x, 0).data(), x.data()), 1e-12);
}

TEST(F2a, MatchesHandComposition) {
  Rng rng(3);
  const SmaConfig cfg = config(6, 3);
  SmaParams p = SmaParams::zeros(cfg);
  randomize(p, rng, 0.5);
  Tensor x = random_tensor(rng, {2, 6, 7, 7});
  AttentionStack st = f2a_forward(x, cfg, p);

  Tensor b = conv2d(x, p.map_weight, p.map_bias);
  std::vector<Tensor> z;
  for (std::size_t n = 0; n < 3; ++n) {
    z.push_back(conv2d(slice(b, 1, n, 1), slice(p.attn_weight, 0, n, 1), slice(p.attn_bias, 0, n, 1),
                       {.stride = 1, .padding = 3}));
  }
  Tensor logits = concat(z, 1);
  EXPECT_LT(max_abs_diff(st.mapped.data(), b.data()), 1e-12);
  EXPECT_LT(max_abs_diff(st.logits.data(), logits.data()), 1e-12);
  EXPECT_LT(max_abs_diff(st.masks.data(), sigmoid(logits).data()), 1e-15);
  EXPECT_EQ(st.masks.shape(), (Shape{2, 3, 7, 7}));
}

TEST(F2a, ChannelMismatch) {
  const SmaConfig cfg = config(4, 2);
  EXPECT_THROW(f2a_forward(Tensor::zeros({1, 3, 5, 5}), cfg, SmaParams::zeros(cfg)), DimensionError);
}

TEST(Aaa, ZeroLayersGiveUniformWeights) {
  Rng rng(4);
  const SmaConfig cfg = config(5, 4);
  Tensor t = aaa_forward(random_tensor(rng, {3, 5, 4, 4}), SmaParams::zeros(cfg));
  for (double v : t.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Aaa, ConstantInputClosedForm) {
  Rng rng(5);
  const std::size_t c = 4, n = 3;
  const double value = 0.7;
  const SmaConfig cfg = config(c, n);
  SmaParams p = SmaParams::zeros(cfg);
  randomize(p, rng, 1.0);
  for (auto& v : p.fc1_bias.mutable_data()) v = 0.0;
  for (auto& v : p.fc2_bias.mutable_data()) v = 0.0;
  auto fc2 = p.fc2_weight.mutable_data();
  std::fill(fc2.begin(), fc2.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) fc2[i * n + i] = 1.0;

  Tensor t = aaa_forward(Tensor::full({1, c, 3, 3}, value), p);
  std::vector<double> logits(n);
  for (std::size_t j = 0; j < n; ++j) {
    double row = 0;
    for (std::size_t i = 0; i < c; ++i) row += p.fc1_weight[j * c + i];
    logits[j] = value * row;
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (double l : logits) z += std::exp(l - top);
  for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(t[j], std::exp(logits[j] - top) / z, 1e-15);
}

TEST(Combine, SingleChannelIsSigmoidOfLogits) {
  Rng rng(6);
  const SmaConfig cfg = config(3, 1);
  SmaParams p = SmaParams::zeros(cfg);
  randomize(p, rng, 0.5);
  Tensor x = random_tensor(rng, {2, 3, 5, 5});
  SmaOutput o = sma_block_forward(x, cfg, p);
  for (double t : o.channel_weights.data()) EXPECT_EQ(t, 1.0);
  EXPECT_EQ(max_abs_diff(o.fused.data(), sigmoid(o.stack.logits).data()), 0.0);
}

TEST(Combine, SharedLogitsIgnoreWeights) {
  Rng rng(7);
  Tensor z1 = random_tensor(rng, {2, 1, 4, 4}, -3, 3);
  AttentionStack st;
  st.logits = concat({z1, z1, z1, z1}, 1);
  st.masks = sigmoid(st.logits);
  Tensor t = softmax(random_tensor(rng, {2, 4}, -2, 2), 1);
  Tensor a = combine(st, t, config(1, 4));
  EXPECT_LT(max_abs_diff(a.data(), sigmoid(z1).data()), 1e-15);
}

TEST(Combine, MatchesWeightedSumOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t b = 1 + rng.index(3), n = 1 + rng.index(5), h = 1 + rng.index(6);
    AttentionStack st;
    st.logits = random_tensor(rng, {b, n, h, h}, -4, 4);
    st.masks = sigmoid(st.logits);
    Tensor t = softmax(random_tensor(rng, {b, n}, -2, 2), 1);
    SmaConfig cfg = config(1, n);
    ASSERT_LT(max_abs_diff(combine(st, t, cfg).data(), oracle::combine(st.logits, t)), 1e-12);
    cfg.combine_on = CombineOn::kMasks;
    ASSERT_LT(max_abs_diff(combine(st, t, cfg).data(), oracle::combine(st.masks, t)), 1e-12);
  }
}

TEST(Combine, RejectsMismatchedWeights) {
  AttentionStack st;
  st.logits = Tensor::zeros({1, 3, 2, 2});
  st.masks = sigmoid(st.logits);
  EXPECT_THROW(combine(st, Tensor::full({1, 2}, 0.5), config(1, 3)), DimensionError);
}

TEST(Refine, Landmarks) {
  Rng rng(9);
  Tensor x = random_tensor(rng, {2, 3, 4, 4});
  Tensor half = refine(Tensor::full({2, 1, 4, 4}, 0.5), x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(half[i], 0.5 * x[i]);
  Tensor zero = refine(Tensor::zeros({2, 1, 4, 4}), x);
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(refine(Tensor::zeros({2, 1, 3, 4}), x), DimensionError);
}

TEST(Refine, MatchesBroadcastOracle) {
  Rng rng(10);
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t b = 1 + rng.index(3), c = trial == 0 ? 8 : 1 + rng.index(9), h = 1 + rng.index(6);
    Tensor a = random_tensor(rng, {b, 1, h, h}, 0, 1);
    Tensor x = random_tensor(rng, {b, c, h, h});
    ASSERT_LT(max_abs_diff(refine(a, x).data(), oracle::refine(a, x)), 1e-12);
  }
}

TEST(SmaBlock, ZeroParamsHalveInput) {
  Rng rng(11);
  for (std::size_t n : {1, 2, 7}) {
    const SmaConfig cfg = config(4, n);
    Tensor x = random_tensor(rng, {2, 4, 5, 5});
    SmaOutput o = sma_block_forward(x, cfg, SmaParams::zeros(cfg));
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(o.refined[i], 0.5 * x[i]);
  }
}

TEST(SmaBlock, InvariantsOnRandomInput) {
  Rng rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const SmaConfig cfg = config(1 + rng.index(6), 1 + rng.index(6));
    SmaParams p = SmaParams::zeros(cfg);
    randomize(p, rng, 1.0);
    Tensor x = random_tensor(rng, {2, cfg.in_channels, 6, 6}, -3, 3);
    SmaOutput o = sma_block_forward(x, cfg, p);
    for (double m : o.stack.masks.data()) ASSERT_TRUE(m > 0.0 && m < 1.0);
    for (double a : o.fused.data()) ASSERT_TRUE(a > 0.0 && a < 1.0);
    for (std::size_t b = 0; b < 2; ++b) {
      double s = 0;
      for (std::size_t n = 0; n < cfg.n_channels; ++n) s += o.channel_weights.at({b, n});
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
    EXPECT_EQ(max_abs_diff(o.stack.masks.data(), sigmoid(o.stack.logits).data()), 0.0);
    EXPECT_EQ(max_abs_diff(o.refined.data(), oracle::refine(o.fused, x)), 0.0);
    EXPECT_EQ(o.fused.shape(), (Shape{2, 1, 6, 6}));
  }
}

TEST(SmaBlock, ChannelPermutationLeavesFusedMapUnchanged) {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.index(6);
    AttentionStack st;
    st.logits = random_tensor(rng, {2, n, 5, 5}, -4, 4);
    st.masks = sigmoid(st.logits);
    Tensor t = softmax(random_tensor(rng, {2, n}), 1);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    AttentionStack ps;
    ps.logits = permute_channels(st.logits, perm);
    ps.masks = permute_channels(st.masks, perm);
    const SmaConfig cfg = config(1, n);
    EXPECT_LT(max_abs_diff(combine(st, t, cfg).data(), combine(ps, permute_channels(t, perm), cfg).data()), 1e-12);
  }
}

TEST(SmaBlock, GradCheckInputAndEveryParameter) {
  Rng rng(14);
  for (CombineOn mode : {CombineOn::kLogits, CombineOn::kMasks}) {
    SmaConfig cfg = config(3, 3);
    cfg.attn_kernel = 3;
    cfg.combine_on = mode;
    SmaParams p = SmaParams::zeros(cfg);
    randomize(p, rng, 0.5);
    Tensor x = random_tensor(rng, {2, 3, 5, 5}, -1, 1, true);
    std::vector<Tensor> leaves{x};
    for (auto& [name, t] : p.named()) leaves.push_back(t);
    const GradCheckResult r = grad_check([&] { return sum(sma_block_forward(x, cfg, p).refined); }, leaves);
    EXPECT_LT(r.max_rel_error, 1e-4);
    EXPECT_EQ(r.coords_checked, 150u + param_count(cfg));
  }
}

TEST(ParamCount, ClosedFormAndRegistry) {
  SmaConfig one = config(1, 1);
  EXPECT_EQ(one.attn_kernel * one.attn_kernel + 1, 50u);
  const SmaConfig cfg = config(64, 7);
  SmaParams p = SmaParams::zeros(cfg);
  EXPECT_EQ(p.map_weight.numel() + p.map_bias.numel(), 455u);
  std::size_t enumerated = 0;
  for (auto& [name, t] : p.named()) enumerated += t.numel();
  EXPECT_EQ(param_count(cfg), enumerated);
  EXPECT_EQ(param_count(cfg), 64u * 7 + 7 + 7 * 50 + 64 * 7 + 7 + 49 + 7);
}

TEST(ParamInit, FanInRaisesAttentionBias) {
  Rng rng(15);
  SmaConfig cfg = config(16, 4);
  SmaParams p = SmaParams::fan_in(cfg, rng);
  for (double b : p.attn_bias.data()) EXPECT_NEAR(b, kAttentionBiasInit, 1.0 / 7.0);
  for (double w : p.map_weight.data()) EXPECT_LE(std::abs(w), 0.25);
  cfg.spatial_attention = false;
  SmaParams q = SmaParams::fan_in(cfg, rng);
  EXPECT_FALSE(q.attn_bias.defined());
  for (double b : q.map_bias.data()) EXPECT_NEAR(b, kAttentionBiasInit, 0.25);
}
