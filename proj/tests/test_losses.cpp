#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sma/gradcheck.hpp"
#include "sma/losses.hpp"
#include "sma/ops.hpp"

using namespace sma;
using oracle::max_abs_diff;
using oracle::random_tensor;

namespace {

Tensor masks_from(std::size_t b, std::size_t n, std::size_t h, std::size_t w, const std::vector<double>& v) {
  return Tensor::from({b, n, h, w}, v);
}

LossConfig multi_class() {
  LossConfig cfg;
  cfg.task = Task::kMultiClass;
  return cfg;
}

}  // namespace

TEST(DiversityLoss, Landmarks) {
  EXPECT_NEAR(diversity_loss(Tensor::full({1, 2, 3, 3}, 1.0), 0.5).item(), 0.5, 1e-12);
  // channel 0 lives on the left column, channel 1 on the right
  Tensor disjoint = masks_from(1, 2, 2, 2, {0.9, 0, 0.8, 0, 0, 1.0, 0, 0.7});
  EXPECT_EQ(diversity_loss(disjoint, 0.5).item(), 0.0);
  EXPECT_EQ(diversity_loss(Tensor::full({2, 1, 3, 3}, 0.9), 0.5).item(), 0.0);
}

TEST(DiversityLoss, MatchesNestedLoopOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t b = 1 + rng.index(2), n = trial == 0 ? 3 : 1 + rng.index(6), h = 1 + rng.index(5);
    Tensor m = random_tensor(rng, {b, n, h, h}, 0, 1);
    const double delta = rng.uniform(0, 0.99);
    ASSERT_NEAR(diversity_loss(m, delta).item(), oracle::diversity_loss(m, delta), 1e-12);
  }
}

TEST(DiversityLoss, NonNegativeAndPermutationInvariant) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.index(5);
    Tensor m = random_tensor(rng, {2, n, 4, 4}, 0, 1);
    const double base = diversity_loss(m, 0.3).item();
    EXPECT_GE(base, 0.0);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<Tensor> parts;
    for (auto k : perm) parts.push_back(slice(m, 1, k, 1));
    EXPECT_NEAR(diversity_loss(concat(parts, 1), 0.3).item(), base, 1e-12);
  }
}

TEST(DiversityLoss, ZeroIffHingeInactive) {
  // every other-channel max at or below delta
  Tensor quiet = Tensor::full({1, 3, 2, 2}, 0.4);
  EXPECT_EQ(diversity_loss(quiet, 0.4).item(), 0.0);
  Tensor active = Tensor::full({1, 3, 2, 2}, 0.41);
  EXPECT_GT(diversity_loss(active, 0.4).item(), 0.0);
}

TEST(WeightedBce, Landmarks) {
  const std::vector<double> w{1.0};
  EXPECT_NEAR(weighted_bce_logits(Tensor::zeros({1, 1}), Tensor::full({1, 1}, 1.0), w).item(),
              std::numbers::ln2, 1e-12);
  EXPECT_NEAR(weighted_bce_logits(Tensor::zeros({1, 1}), Tensor::zeros({1, 1}), w).item(), std::numbers::ln2,
              1e-12);

  Rng rng(3);
  Tensor x = random_tensor(rng, {4, 3}, -4, 4);
  Tensor y = Tensor::from({4, 3}, {1, 0, 0, 1, 1, 0, 0, 0, 1, 1, 1, 1});
  const std::vector<double> w1{0.7, 1.3, 2.0}, w2{1.4, 2.6, 4.0};
  EXPECT_NEAR(weighted_bce_logits(x, y, w2).item(), 2.0 * weighted_bce_logits(x, y, w1).item(), 1e-14);
}

TEST(WeightedBce, MatchesDirectFormula) {
  Rng rng(4);
  Tensor x = random_tensor(rng, {5, 4}, -6, 6);
  std::vector<double> yv(20), w{1.0, 2.0, 3.5, 10.0};
  for (auto& v : yv) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
  Tensor y = Tensor::from({5, 4}, yv);
  double expect = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    const double s = oracle::sigmoid(x[i]);
    expect += -w[i % 4] * (yv[i] * std::log(s) + (1 - yv[i]) * std::log(1 - s));
  }
  EXPECT_NEAR(weighted_bce_logits(x, y, w).item(), expect / 20, 1e-12);
}

TEST(WeightedBce, StableAtLargeLogits) {
  Tensor x = Tensor::from({1, 4}, {700, -700, 700, -700});
  Tensor y = Tensor::from({1, 4}, {1, 0, 0, 1});
  const double l = weighted_bce_logits(x, y, std::vector<double>(4, 1.0)).item();
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_NEAR(l, 350.0, 1e-9);
}

TEST(WeightedBce, RejectsNonBinaryLabelsWhenChecked) {
  CheckedModeGuard checked;
  EXPECT_THROW(weighted_bce_logits(Tensor::zeros({1, 2}), Tensor::from({1, 2}, {0.5, 1.0}),
                                   std::vector<double>(2, 1.0)),
               NumericError);
}

TEST(CrossEntropy, Landmarks) {
  const std::vector<std::size_t> cls{2};
  EXPECT_NEAR(cross_entropy(Tensor::full({1, 4}, 0.3), cls).item(), std::log(4.0), 1e-12);
  EXPECT_LT(cross_entropy(Tensor::from({1, 4}, {0, 0, 50, 0}), cls).item(), 1e-20);
  const std::vector<std::size_t> bad{4};
  EXPECT_THROW(cross_entropy(Tensor::zeros({1, 4}), bad), DimensionError);
}

TEST(CrossEntropy, MatchesSoftmaxThenLog) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 1 + rng.index(5), k = 2 + rng.index(6);
    Tensor x = random_tensor(rng, {b, k}, -8, 8);
    std::vector<std::size_t> cls(b);
    for (auto& c : cls) c = rng.index(k);
    double expect = 0;
    for (std::size_t r = 0; r < b; ++r) {
      double z = 0;
      for (std::size_t j = 0; j < k; ++j) z += std::exp(x[r * k + j]);
      expect -= std::log(std::exp(x[r * k + cls[r]]) / z);
    }
    EXPECT_NEAR(cross_entropy(x, cls).item(), expect / static_cast<double>(b), 1e-10);
  }
}

TEST(CrossEntropy, StableAtLargeLogits) {
  const std::vector<std::size_t> cls{0};
  const double l = cross_entropy(Tensor::from({1, 3}, {-700, 700, 0}), cls).item();
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_NEAR(l, 1400.0, 1e-9);
}

TEST(TotalLoss, Arithmetic) {
  LossConfig cfg;
  EXPECT_NEAR(total_loss(Tensor::scalar(1), Tensor::scalar(2), Tensor::scalar(3), cfg).item(), 1.5, 1e-15);
  cfg.alpha = cfg.lambda = 0.0;
  EXPECT_EQ(total_loss(Tensor::scalar(1.25), Tensor::scalar(2), Tensor::scalar(3), cfg).item(), 1.25);
}

TEST(TotalLoss, GradientIsWeightedSumOfParts) {
  Rng rng(6);
  Tensor w = random_tensor(rng, {3, 8}, -1, 1, true);
  Tensor x = random_tensor(rng, {2, 8});
  Tensor y = Tensor::from({2, 3}, {1, 0, 1, 0, 0, 1});
  const std::vector<double> pw{1.0, 2.0, 3.0};
  LossConfig cfg;
  cfg.alpha = 0.3;
  cfg.lambda = 0.7;
  auto parts = [&] {
    Tensor logits = linear(x, w, Tensor::zeros({3}));
    Tensor cla = weighted_bce_logits(logits, y, pw);
    Tensor div = diversity_loss(reshape(sigmoid(logits), {1, 3, 1, 2}), 0.2);
    Tensor ma = mean(mul(logits, logits));
    return std::array<Tensor, 3>{cla, div, ma};
  };
  auto grad_of = [&](int which) {
    w.zero_grad();
    auto p = parts();
    backward(which < 0 ? total_loss(p[0], p[1], p[2], cfg) : p[which]);
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  const auto all = grad_of(-1), g0 = grad_of(0), g1 = grad_of(1), g2 = grad_of(2);
  for (std::size_t i = 0; i < all.size(); ++i) {
    EXPECT_NEAR(all[i], g0[i] + cfg.alpha * g1[i] + cfg.lambda * g2[i], 1e-10);
  }
}

TEST(MultiAttentionLoss, SingleChannelUnitMaskIsMainLoss) {
  Rng rng(7);
  Tensor input = random_tensor(rng, {3, 4, 5, 5});
  AttentionStack st;
  st.logits = Tensor::full({3, 1, 5, 5}, 40.0);
  st.masks = Tensor::full({3, 1, 5, 5}, 1.0);
  BypassHeads heads = BypassHeads::uniform(1, 4, 2, rng, 0.5);
  Targets t;
  t.labels = Tensor::from({3, 2}, {1, 0, 0, 1, 1, 1});
  LossConfig cfg;
  cfg.pos_weights = {1.5, 2.0};
  Tensor pooled = reshape(avg_pool(input, {2, 3}), {3, 4});
  Tensor main = weighted_bce_logits(linear(pooled, heads.weights[0], heads.biases[0]), t.labels, cfg.pos_weights);
  EXPECT_NEAR(multi_attention_loss(st, input, t, heads, cfg).item(), main.item(), 1e-12);
}

TEST(MultiAttentionLoss, ZeroHeadsGiveLnK) {
  Rng rng(8);
  Tensor input = random_tensor(rng, {2, 3, 4, 4});
  AttentionStack st;
  st.logits = random_tensor(rng, {2, 3, 4, 4});
  st.masks = sigmoid(st.logits);
  Targets t;
  t.classes = {1, 4};
  EXPECT_NEAR(multi_attention_loss(st, input, t, BypassHeads::zeros(3, 3, 5), multi_class()).item(), std::log(5.0),
              1e-12);
}

TEST(MultiAttentionLoss, MatchesComposition) {
  Rng rng(9);
  Tensor input = random_tensor(rng, {2, 3, 4, 4});
  AttentionStack st;
  st.logits = random_tensor(rng, {2, 2, 4, 4}, -2, 2);
  st.masks = sigmoid(st.logits);
  BypassHeads heads = BypassHeads::uniform(2, 3, 4, rng, 0.5);
  Targets t;
  t.classes = {3, 0};
  const LossConfig cfg = multi_class();
  double expect = 0;
  for (std::size_t n = 0; n < 2; ++n) {
    Tensor pooled = reshape(avg_pool(st.attended(input, n), {2, 3}), {2, 3});
    expect += cross_entropy(linear(pooled, heads.weights[n], heads.biases[n]), t.classes).item();
  }
  EXPECT_NEAR(multi_attention_loss(st, input, t, heads, cfg).item(), expect / 2, 1e-12);
  EXPECT_THROW(multi_attention_loss(st, input, t, BypassHeads::zeros(3, 3, 4), cfg), DimensionError);
}

TEST(LossGradients, PassGradCheck) {
  Rng rng(10);
  Tensor x = random_tensor(rng, {3, 4}, -3, 3, true);
  Tensor y = Tensor::from({3, 4}, {1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 1, 1});
  const std::vector<double> w{1, 2, 3, 4};
  EXPECT_LT(grad_check([&](const Tensor& v) { return weighted_bce_logits(v, y, w); }, x), 1e-5);
  const std::vector<std::size_t> cls{0, 3, 2};
  EXPECT_LT(grad_check([&](const Tensor& v) { return cross_entropy(v, cls); }, x), 1e-5);

  Tensor input = random_tensor(rng, {2, 3, 4, 4}, -1, 1, true);
  Tensor logits = random_tensor(rng, {2, 2, 4, 4}, -2, 2, true);
  BypassHeads heads = BypassHeads::uniform(2, 3, 4, rng, 0.5);
  Targets t;
  t.labels = Tensor::from({2, 4}, {1, 0, 1, 0, 0, 1, 1, 1});
  LossConfig cfg;
  cfg.pos_weights = {1, 2, 1, 3};
  auto lma = [&] {
    AttentionStack st;
    st.logits = logits;
    st.masks = sigmoid(logits);
    return multi_attention_loss(st, input, t, heads, cfg);
  };
  std::vector<Tensor> leaves{input, logits};
  for (auto& wt : heads.weights) leaves.push_back(wt);
  EXPECT_LT(grad_check(lma, leaves).max_rel_error, 1e-5);
}

TEST(PositiveWeights, ClampedRatio) {
  const std::vector<std::size_t> pos{50, 10, 1, 0, 80};
  const auto w = positive_class_weights(pos, 100);
  EXPECT_DOUBLE_EQ(w[0], 1.0);
  EXPECT_DOUBLE_EQ(w[1], 9.0);
  EXPECT_DOUBLE_EQ(w[2], 10.0);
  EXPECT_DOUBLE_EQ(w[3], 10.0);
  EXPECT_DOUBLE_EQ(w[4], 1.0);
}

TEST(LossConfig, Validation) {
  LossConfig cfg;
  cfg.pos_weights = {1.0, 2.0};
  EXPECT_NO_THROW(cfg.validate(2));
  EXPECT_THROW(cfg.validate(3), ConfigError);
  cfg.alpha = -0.1;
  EXPECT_THROW(cfg.validate(2), ConfigError);
  cfg.alpha = 0.1;
  cfg.pos_weights = {1.0, 0.0};
  EXPECT_THROW(cfg.validate(2), ConfigError);
}
