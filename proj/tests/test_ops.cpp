#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sma/gradcheck.hpp"
#include "sma/losses.hpp"
#include "sma/ops.hpp"

using namespace sma;
using oracle::max_abs_diff;
using oracle::random_tensor;

TEST(Autograd, SumGivesOnes) {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Autograd, SumOfSquaresGivesTwoX) {
  Rng rng(3);
  Tensor x = random_tensor(rng, {4, 5}, -2, 2, true);
  backward(sum(mul(x, x)));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x[i]);
}

TEST(Autograd, FanOutAccumulates) {
  Tensor x = Tensor::from({3}, {1, -2, 0.5}, true);
  Tensor y = add(scale(x, 3.0), mul(x, x));
  backward(sum(y));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 3.0 + 2.0 * x[i]);
}

TEST(Autograd, RejectsNonScalarAndSecondBackward) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(backward(mul(x, x)), NumericError);
  Tensor loss = sum(mul(x, x));
  backward(loss);
  EXPECT_THROW(backward(loss), NumericError);
}

TEST(Autograd, NoGradRecordsNothing) {
  Tape::current().clear();
  Tensor x = Tensor::from({2}, {1, 2}, true);
  {
    NoGradGuard guard;
    Tensor y = sigmoid(x);
    EXPECT_EQ(Tape::current().size(), 0u);
  }
  Tensor y = sigmoid(x);
  EXPECT_GT(Tape::current().size(), 0u);
  Tape::current().clear();
}

TEST(TensorInvariants, ShapeMustMatchData) {
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  Tensor t = Tensor::from({2, 3}, std::vector<double>(6, 1.0));
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.at({1, 2}), 1.0);
  EXPECT_THROW(t.at({2, 0}), DimensionError);
}

TEST(TensorInvariants, CheckedModeCatchesNonFinite) {
  CheckedModeGuard checked;
  Tensor x = Tensor::from({2}, {1.0, -1.0});
  EXPECT_THROW(log(x), NumericError);
  EXPECT_THROW(exp(Tensor::scalar(1000.0)), NumericError);
}

TEST(TensorInvariants, ZeroFilledBufferIsZero) {
  Buffer b(64, 0.0);
  for (double v : b) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, ScalingAndIdentity) {
  Tensor ones = Tensor::full({1, 1, 2, 2}, 1.0);
  Tensor y = conv2d(ones, Tensor::from({1, 1, 1, 1}, {2.0}), Tensor::from({1}, {0.0}));
  for (double v : y.data()) EXPECT_EQ(v, 2.0);

  Rng rng(11);
  Tensor x = random_tensor(rng, {2, 1, 5, 6});
  Tensor same = conv2d(x, Tensor::from({1, 1, 1, 1}, {1.0}), Tensor::from({1}, {0.0}));
  EXPECT_EQ(max_abs_diff(same.data(), x.data()), 0.0);
}

TEST(Conv2d, ThreeByThreeMatchesSlidingWindow) {
  Rng rng(5);
  Tensor x = random_tensor(rng, {1, 1, 5, 5});
  Tensor w = random_tensor(rng, {1, 1, 3, 3});
  Tensor b = random_tensor(rng, {1});
  Tensor y = conv2d(x, w, b, {.stride = 1, .padding = 1});
  ASSERT_EQ(y.shape(), (Shape{1, 1, 5, 5}));
  EXPECT_LT(max_abs_diff(y.data(), oracle::conv2d(x, w, b, 1, 1, 1)), 1e-12);
}

TEST(Conv2d, RandomGeometriesMatchOracle) {
  Rng rng(2024);
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t groups = 1 + rng.index(3);
    const std::size_t cg = 1 + rng.index(3), og = 1 + rng.index(3);
    const std::size_t k = 1 + 2 * rng.index(4);
    const std::size_t stride = 1 + rng.index(2);
    const std::size_t pad = rng.index(k / 2 + 1);
    const std::size_t h = k + rng.index(6), w = k + rng.index(6);
    Tensor x = random_tensor(rng, {1 + rng.index(2), groups * cg, h, w});
    Tensor wt = random_tensor(rng, {groups * og, cg, k, k});
    Tensor b = rng.bernoulli(0.5) ? random_tensor(rng, {groups * og}) : Tensor();
    Tensor y = conv2d(x, wt, b, {.stride = stride, .padding = pad, .groups = groups});
    ASSERT_LT(max_abs_diff(y.data(), oracle::conv2d(x, wt, b, stride, pad, groups)), 1e-12)
        << "trial " << trial << " k=" << k << " stride=" << stride << " pad=" << pad << " groups=" << groups;
  }
}

TEST(Conv2d, Errors) {
  EXPECT_THROW(same_padding(4), ConfigError);
  EXPECT_EQ(same_padding(7), 3u);
  Tensor x = Tensor::zeros({1, 3, 4, 4});
  EXPECT_THROW(conv2d(x, Tensor::zeros({2, 2, 3, 3}), Tensor()), DimensionError);
  EXPECT_THROW(conv2d(x, Tensor::zeros({2, 3, 3, 3}), Tensor::zeros({3})), DimensionError);
}

TEST(Sigmoid, Landmarks) {
  EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  EXPECT_NEAR(sigmoid(Tensor::scalar(100.0)).item(), 1.0, 1e-12);
  Tensor x = Tensor::scalar(0.0, true);
  backward(sigmoid(x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);
}

TEST(Sigmoid, StrictlyInsideUnitIntervalAndStable) {
  std::vector<double> v;
  for (double x = -36.0; x <= 36.0; x += 0.25) v.push_back(x);
  Tensor s = sigmoid(Tensor::from({v.size()}, v));
  for (double y : s.data()) {
    EXPECT_GT(y, 0.0);
    EXPECT_LT(y, 1.0);
  }
  Tensor far = sigmoid(Tensor::from({2}, {-1000.0, 1000.0}));
  EXPECT_TRUE(std::isfinite(far[0]) && std::isfinite(far[1]));
  EXPECT_EQ(far[1], 1.0);
}

TEST(Softmax, Landmarks) {
  Tensor u = softmax(Tensor::from({1, 3}, {4.2, 4.2, 4.2}), 1);
  for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  Tensor p = softmax(Tensor::from({1, 2}, {0.0, std::numbers::ln2}), 1);
  EXPECT_NEAR(p[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(p[1], 2.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvariantAndNormalized) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor(rng, {3, 6}, -20, 20);
    const double c = rng.uniform(-50, 50);
    Tensor a = softmax(x, 1), b = softmax(add_scalar(x, c), 1);
    EXPECT_LT(max_abs_diff(a.data(), b.data()), 1e-12);
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < 6; ++j) s += a.at({r, j});
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
  Tensor y = softmax(Tensor::from({2, 2}, {1, 2, 3, 4}), 0);
  EXPECT_NEAR(y.at({0, 0}) + y.at({1, 0}), 1.0, 1e-15);
}

TEST(AvgPool, Landmarks) {
  Tensor c = avg_pool(Tensor::full({2, 3, 4, 4}, 1.75), {1, 2, 3});
  ASSERT_EQ(c.shape(), (Shape{2, 1, 1, 1}));
  for (double v : c.data()) EXPECT_DOUBLE_EQ(v, 1.75);
  EXPECT_DOUBLE_EQ(avg_pool(Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4}), {2, 3}).item(), 2.5);
}

TEST(AvgPool, MatchesLoopOracle) {
  Rng rng(12);
  for (int trial = 0; trial < 120; ++trial) {
    Shape s{1 + rng.index(3), 1 + rng.index(4), 1 + rng.index(5), 1 + rng.index(5)};
    std::vector<std::size_t> axes;
    std::vector<bool> flags(4, false);
    for (std::size_t a = 0; a < 4; ++a) {
      if (rng.bernoulli(0.5)) {
        axes.push_back(a);
        flags[a] = true;
      }
    }
    Tensor x = random_tensor(rng, s);
    ASSERT_LT(max_abs_diff(avg_pool(x, axes).data(), oracle::avg_pool(x, flags)), 1e-12);
  }
}

TEST(Linear, Landmarks) {
  Rng rng(1);
  Tensor x = random_tensor(rng, {3, 4});
  Tensor eye = Tensor::zeros({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.mutable_data()[i * 5] = 1.0;
  EXPECT_EQ(max_abs_diff(linear(x, eye, Tensor::zeros({4})).data(), x.data()), 0.0);
  Tensor v = Tensor::from({2}, {0.5, -3.0});
  Tensor y = linear(x, Tensor::zeros({2, 4}), v);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(y.at({r, 0}), 0.5);
    EXPECT_EQ(y.at({r, 1}), -3.0);
  }
  EXPECT_THROW(linear(x, Tensor::zeros({2, 5}), v), DimensionError);
}

TEST(Linear, MatchesDotProductOracle) {
  Rng rng(13);
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t b = 1 + rng.index(4), i = 1 + rng.index(9), o = 1 + rng.index(9);
    Tensor x = random_tensor(rng, {b, i}), w = random_tensor(rng, {o, i}), bias = random_tensor(rng, {o});
    ASSERT_LT(max_abs_diff(linear(x, w, bias).data(), oracle::linear(x, w, bias)), 1e-12);
  }
}

TEST(Elementwise, Landmarks) {
  Rng rng(4);
  Tensor x = random_tensor(rng, {3, 2, 2});
  EXPECT_EQ(max_abs_diff(elementwise(x, Tensor::full({3, 2, 2}, 1.0), ElementwiseKind::kMul).data(), x.data()),
            0.0);
  Tensor half = mul(Tensor::full({1, 2, 2}, 0.5), x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(half[i], 0.5 * x[i]);
  Tensor h = elementwise(Tensor::from({2}, {0.2, 0.7}), Tensor::scalar(0.5), ElementwiseKind::kHingeSub);
  EXPECT_EQ(h[0], 0.0);
  EXPECT_NEAR(h[1], 0.2, 1e-15);
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
}

TEST(Elementwise, HingeKinkHasZeroSubgradient) {
  Tensor x = Tensor::from({3}, {0.5, 0.4, 0.6}, true);
  backward(sum(hinge_sub(x, 0.5)));
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], 1.0);
}

TEST(Elementwise, BroadcastGradientReduces) {
  Rng rng(21);
  Tensor mask = random_tensor(rng, {2, 1, 3, 3}, 0, 1, true);
  Tensor x = random_tensor(rng, {2, 4, 3, 3}, -1, 1, true);
  backward(sum(mul(mask, x)));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t p = 0; p < 9; ++p) {
      double s = 0;
      for (std::size_t c = 0; c < 4; ++c) s += x[(b * 4 + c) * 9 + p];
      EXPECT_NEAR(mask.grad()[b * 9 + p], s, 1e-14);
    }
}

TEST(Reductions, MaxOverOthersBreaksTiesLow) {
  // channels at one pixel: 0.3, 0.9, 0.9
  Tensor m = Tensor::from({1, 3, 1, 1}, {0.3, 0.9, 0.9}, true);
  Tensor o = max_over_others(m, 1);
  EXPECT_EQ(o[0], 0.9);
  EXPECT_EQ(o[1], 0.9);
  EXPECT_EQ(o[2], 0.9);
  backward(sum(o));
  // n=0 routes to k=1 (lowest tie), n=1 to k=2, n=2 to k=1.
  EXPECT_EQ(m.grad()[0], 0.0);
  EXPECT_EQ(m.grad()[1], 2.0);
  EXPECT_EQ(m.grad()[2], 1.0);
  Tensor single = max_over_others(Tensor::full({1, 1, 2, 2}, 0.7), 1);
  for (double v : single.data()) EXPECT_EQ(v, 0.0);
}

TEST(Reductions, MaskedAvgPoolEqualsComposition) {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 1 + rng.index(2), c = 1 + rng.index(4), n = 1 + rng.index(3), h = 2 + rng.index(4);
    Tensor x = random_tensor(rng, {b, c, h, h}, -1, 1, true);
    Tensor m = random_tensor(rng, {b, n, h, h}, 0, 1, true);
    Tensor fast = masked_avg_pool(x, m);
    Tensor w = random_tensor(rng, fast.shape());
    backward(sum(mul(fast, w)));
    const std::vector<double> gx(x.grad().begin(), x.grad().end()), gm(m.grad().begin(), m.grad().end());
    x.zero_grad();
    m.zero_grad();

    std::vector<Tensor> parts;
    for (std::size_t k = 0; k < n; ++k) {
      parts.push_back(reshape(avg_pool(mul(x, slice(m, 1, k, 1)), {2, 3}), {b, 1, c}));
    }
    Tensor slow = concat(parts, 1);
    ASSERT_LT(max_abs_diff(fast.data(), slow.data()), 1e-14);
    backward(sum(mul(slow, w)));
    EXPECT_LT(max_abs_diff(gx, x.grad()), 1e-13);
    EXPECT_LT(max_abs_diff(gm, m.grad()), 1e-13);
  }
}

TEST(Shape, ReshapeConcatStackSlice) {
  Tensor a = Tensor::from({1, 2}, {1, 2}), b = Tensor::from({1, 2}, {3, 4});
  Tensor c = concat({a, b}, 0);
  EXPECT_EQ(c.shape(), (Shape{2, 2}));
  EXPECT_EQ(c.at({1, 0}), 3.0);
  Tensor s = stack({a, b}, 1);
  EXPECT_EQ(s.shape(), (Shape{1, 2, 2}));
  EXPECT_EQ(s.at({0, 1, 1}), 4.0);
  EXPECT_EQ(slice(c, 1, 1, 1).at({1, 0}), 4.0);
  EXPECT_EQ(flatten(Tensor::zeros({2, 3, 4})).shape(), (Shape{2, 12}));
  EXPECT_THROW(reshape(c, {3}), DimensionError);
  EXPECT_THROW(slice(c, 1, 1, 2), DimensionError);
}

TEST(BatchNorm, TrainNormalizesEvalUsesRunningStats) {
  Rng rng(41);
  Tensor x = random_tensor(rng, {4, 2, 3, 3}, -2, 5);
  BatchNormState st{Tensor::zeros({2}), Tensor::full({2}, 1.0)};
  Tensor y = batch_norm2d(x, Tensor::full({2}, 1.0), Tensor::zeros({2}), st, true);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0, sq = 0;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t p = 0; p < 9; ++p) {
        const double v = y[(b * 2 + c) * 9 + p];
        mean += v;
        sq += v * v;
      }
    EXPECT_NEAR(mean / 36, 0.0, 1e-12);
    EXPECT_NEAR(sq / 36, 1.0, 1e-3);
  }
  EXPECT_NE(st.running_mean[0], 0.0);

  BatchNormState fresh{Tensor::zeros({2}), Tensor::full({2}, 1.0)};
  Tensor e = batch_norm2d(x, Tensor::full({2}, 1.0), Tensor::zeros({2}), fresh, false);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(e[i], x[i] / std::sqrt(1.0 + 1e-5), 1e-12);
}

TEST(Determinism, ForwardIsBitIdentical) {
  Rng rng(51);
  Tensor x = random_tensor(rng, {2, 4, 8, 8});
  Tensor w = random_tensor(rng, {6, 4, 3, 3});
  Tensor b = random_tensor(rng, {6});
  auto run = [&] { return softmax(flatten(avg_pool(relu(conv2d(x, w, b, {.padding = 1})), {2, 3})), 1); };
  Tensor a = run(), c = run();
  EXPECT_EQ(max_abs_diff(a.data(), c.data()), 0.0);
}

TEST(GradCheck, DocumentedExamples) {
  Rng rng(61);
  EXPECT_LT(grad_check([](const Tensor& x) { return sum(sigmoid(x)); }, random_tensor(rng, {3, 4}, -2, 2, true)),
            1e-6);
  Tensor w = random_tensor(rng, {2, 2, 3, 3});
  EXPECT_LT(grad_check([&](const Tensor& x) { return sum(conv2d(x, w, Tensor(), {.padding = 1})); },
                       random_tensor(rng, {1, 2, 5, 5}, -1, 1, true)),
            1e-5);
  // masks spaced so no hinge input sits near delta and no two channels tie
  std::vector<double> m;
  for (std::size_t i = 0; i < 3 * 16; ++i) m.push_back(0.05 + 0.0183 * static_cast<double>((i * 7) % 48));
  EXPECT_LT(grad_check([](const Tensor& x) { return diversity_loss(x, 0.5); },
                       Tensor::from({1, 3, 4, 4}, m, true)),
            1e-5);
}

TEST(GradCheck, DetectsNonDeterminism) {
  int calls = 0;
  Tensor x = Tensor::from({2}, {0.1, 0.2}, true);
  auto flaky = [&]() { return scale(sum(x), 1.0 + 1e-3 * (calls++)); };
  EXPECT_THROW(grad_check(flaky, {x}), NumericError);
}

namespace {

struct PrimitiveCase {
  const char* name;
  Shape shape;
  double lo, hi;
  std::function<Tensor(const Tensor&)> f;
};

}  // namespace

// Every primitive at 100 or more coordinates, away from kinks.
TEST(GradCheck, EveryPrimitive) {
  Rng wr(71);
  const Tensor w3 = random_tensor(wr, {3, 2, 3, 3});
  const Tensor lw = random_tensor(wr, {4, 25});
  const Tensor other = random_tensor(wr, {4, 5, 5});
  const Tensor gamma = random_tensor(wr, {4}, 0.5, 1.5), beta = random_tensor(wr, {4});
  const Tensor probe = random_tensor(wr, {4, 5, 5});
  auto weighted = [](const Tensor& y) {
    Rng r(99);
    return sum(mul(y, random_tensor(r, y.shape())));
  };
  const std::vector<PrimitiveCase> cases = {
      {"conv2d", {2, 2, 5, 5}, -1, 1, [&](const Tensor& x) { return weighted(conv2d(x, w3, Tensor(), {.padding = 0, .groups = 1})); }},
      {"sigmoid", {4, 5, 5}, -3, 3, [&](const Tensor& x) { return weighted(sigmoid(x)); }},
      {"relu", {4, 5, 5}, 0.1, 2, [&](const Tensor& x) { return weighted(relu(x)); }},
      {"exp", {4, 5, 5}, -2, 2, [&](const Tensor& x) { return weighted(exp(x)); }},
      {"log", {4, 5, 5}, 0.5, 3, [&](const Tensor& x) { return weighted(log(x)); }},
      {"softmax", {4, 25}, -3, 3, [&](const Tensor& x) { return weighted(softmax(x, 1)); }},
      {"linear", {4, 25}, -1, 1, [&](const Tensor& x) { return weighted(linear(x, lw, Tensor::zeros({4}))); }},
      {"add", {4, 5, 5}, -1, 1, [&](const Tensor& x) { return weighted(add(mul(x, x), other)); }},
      {"sub", {4, 5, 5}, -1, 1, [&](const Tensor& x) { return weighted(sub(other, mul(x, x))); }},
      {"mul", {4, 5, 5}, -1, 1, [&](const Tensor& x) { return weighted(mul(x, other)); }},
      {"scale", {4, 5, 5}, -1, 1, [&](const Tensor& x) { return weighted(scale(mul(x, x), -2.5)); }},
      {"add_scalar", {4, 5, 5}, -1, 1, [&](const Tensor& x) { return weighted(add_scalar(mul(x, x), 0.3)); }},
      {"hinge_sub", {4, 5, 5}, 0.6, 1.5, [&](const Tensor& x) { return weighted(hinge_sub(mul(x, x), 0.2)); }},
      {"mean", {4, 5, 5}, -1, 1, [&](const Tensor& x) { return mean(mul(x, x)); }},
      {"avg_pool", {4, 5, 5}, -1, 1, [&](const Tensor& x) { return sum(mul(avg_pool(mul(x, x), {0, 2}), slice(probe, 0, 0, 1))); }},
      {"max_over_axis", {4, 5, 5}, -1, 1, [&](const Tensor& x) { return sum(mul(max_over_axis(add(x, other), 0), slice(probe, 0, 0, 1))); }},
      {"max_over_others", {1, 4, 5, 5}, -1, 1, [&](const Tensor& x) { return weighted(max_over_others(x, 1)); }},
  };
  for (const auto& c : cases) {
    Rng rng(fnv1a(c.name));
    Tensor x = random_tensor(rng, c.shape, c.lo, c.hi, true);
    ASSERT_GE(x.numel(), 100u);
    const double err = grad_check(c.f, x);
    EXPECT_LT(err, 1e-5) << c.name;
  }

  Rng rng(72);
  Tensor x = random_tensor(rng, {2, 4, 5, 5}, -1, 1, true);
  BatchNormState st{Tensor::zeros({4}), Tensor::full({4}, 1.0)};
  auto bn = [&](const Tensor& in) {
    BatchNormState copy{st.running_mean.clone(), st.running_var.clone()};
    Tensor y = batch_norm2d(in, gamma, beta, copy, true);
    return sum(mul(y, concat({reshape(probe, {1, 4, 5, 5}), reshape(probe, {1, 4, 5, 5})}, 0)));
  };
  EXPECT_LT(grad_check(bn, x), 1e-5) << "batch_norm2d";
}
