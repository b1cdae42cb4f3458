#pragma once

// Naive scalar-loop references, written independently of the library kernels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "sma/random.hpp"
#include "sma/tensor.hpp"

namespace sma::oracle {

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0, bool grad = false) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Grouped cross-correlation, straight from the definition.
inline std::vector<double> conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                                  std::size_t pad, std::size_t groups) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), cg = w.dim(1), k = w.dim(2);
  const std::size_t og = O / groups;
  const std::size_t oh = (H + 2 * pad - k) / stride + 1, ow = (W + 2 * pad - k) / stride + 1;
  std::vector<double> out(B * O * oh * ow);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = bias.defined() ? bias[o] : 0.0;
          const std::size_t g = o / og;
          for (std::size_t c = 0; c < cg; ++c)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const long yy = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long xx = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                const std::size_t ci = g * cg + c;
                acc += x[((b * C + ci) * H + yy) * W + xx] * w[((o * cg + c) * k + u) * k + v];
              }
          out[((b * O + o) * oh + i) * ow + j] = acc;
        }
  return out;
}

/// Mean over the axes flagged in `reduce`, by enumerating every element.
inline std::vector<double> avg_pool(const Tensor& x, const std::vector<bool>& reduce) {
  const Shape& s = x.shape();
  Shape os = s;
  std::size_t count = 1;
  for (std::size_t a = 0; a < s.size(); ++a) {
    if (reduce[a]) {
      os[a] = 1;
      count *= s[a];
    }
  }
  std::vector<double> sums(numel(os), 0.0);
  std::vector<std::size_t> idx(s.size(), 0);
  for (std::size_t flat = 0; flat < x.numel(); ++flat) {
    std::size_t rem = flat;
    for (std::size_t a = s.size(); a-- > 0;) {
      idx[a] = rem % s[a];
      rem /= s[a];
    }
    std::size_t o = 0;
    for (std::size_t a = 0; a < s.size(); ++a) o = o * os[a] + (reduce[a] ? 0 : idx[a]);
    sums[o] += x[flat];
  }
  for (auto& v : sums) v /= static_cast<double>(count);
  return sums;
}

inline std::vector<double> linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t B = x.dim(0), I = x.dim(1), O = w.dim(0);
  std::vector<double> out(B * O);
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t o = 0; o < O; ++o) {
      double dot = b[o];
      for (std::size_t i = 0; i < I; ++i) dot += x[r * I + i] * w[o * I + i];
      out[r * O + o] = dot;
    }
  return out;
}

/// A[b,0,h,w] = sigmoid(sum_n T[b,n] src[b,n,h,w]).
inline std::vector<double> combine(const Tensor& src, const Tensor& t) {
  const std::size_t B = src.dim(0), N = src.dim(1), P = src.dim(2) * src.dim(3);
  std::vector<double> out(B * P);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t p = 0; p < P; ++p) {
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) acc += t[b * N + n] * src[(b * N + n) * P + p];
      out[b * P + p] = sigmoid(acc);
    }
  return out;
}

inline std::vector<double> refine(const Tensor& a, const Tensor& x) {
  const std::size_t B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
  std::vector<double> out(B * C * P);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t p = 0; p < P; ++p) out[(b * C + c) * P + p] = a[b * P + p] * x[(b * C + c) * P + p];
  return out;
}

inline double diversity_loss(const Tensor& m, double delta) {
  const std::size_t B = m.dim(0), N = m.dim(1), P = m.dim(2) * m.dim(3);
  if (N < 2) return 0.0;
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t p = 0; p < P; ++p) {
        double other = -INFINITY;
        for (std::size_t k = 0; k < N; ++k) {
          if (k != n) other = std::max(other, m[(b * N + k) * P + p]);
        }
        total += m[(b * N + n) * P + p] * std::max(0.0, other - delta);
      }
  return total / static_cast<double>(B * N * P);
}

}  // namespace sma::oracle
