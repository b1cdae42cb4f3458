#pragma once

#include <cstddef>
#include <vector>

#include "sma/tensor.hpp"

namespace sma {

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// Padding that keeps H x W unchanged at stride 1. Throws ConfigError for even k.
std::size_t same_padding(std::size_t kernel);

/// Cross-correlation of input [B,Cin,H,W] with weight [Cout,Cin/groups,k,k]
/// plus an optional bias [Cout] (pass an undefined Tensor for none).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              Conv2dOptions opt = {});

/// 2-D max pooling with window k, used by the full-resolution stem.
Tensor max_pool2d(const Tensor& input, std::size_t kernel, std::size_t stride, std::size_t padding);

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
/// Natural log; non-positive inputs raise NumericError in checked mode.
Tensor log(const Tensor& x);

/// Softmax along `axis` with max subtraction.
Tensor softmax(const Tensor& x, std::size_t axis);

/// x [B,Din] * weight[Dout,Din]^T + bias[Dout].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Elementwise ops with singleton broadcasting (shapes are right-aligned).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
/// max(0, x - delta); the subgradient at x == delta is 0.
Tensor hinge_sub(const Tensor& x, double delta);

enum class ElementwiseKind { kMul, kAdd, kHingeSub };
/// Dispatch form; for kHingeSub `b` must be a scalar tensor holding delta.
Tensor elementwise(const Tensor& a, const Tensor& b, ElementwiseKind kind);

/// Sum of all elements (scalar result).
Tensor sum(const Tensor& x);
/// Mean of all elements (scalar result).
Tensor mean(const Tensor& x);
/// Sums over `axes`, which keep size 1.
Tensor sum_axes(const Tensor& x, const std::vector<std::size_t>& axes);
/// Arithmetic mean over `axes`, which keep size 1.
Tensor avg_pool(const Tensor& x, const std::vector<std::size_t>& axes);

/// Max along `axis` (kept as size 1). The gradient goes to the first maximal
/// entry.
Tensor max_over_axis(const Tensor& x, std::size_t axis);
/// For every index n along `axis`, the max over all other indices k != n.
/// Ties resolve to the lowest k. A size-1 axis yields zeros.
Tensor max_over_others(const Tensor& x, std::size_t axis);

/// out[b,n,c] = mean over (h,w) of x[b,c,h,w] * masks[b,n,h,w]; equals
/// avg_pool(x * masks[:,n], {2,3}) for every n without forming the products.
Tensor masked_avg_pool(const Tensor& x, const Tensor& masks);

Tensor reshape(const Tensor& x, Shape shape);
/// [B, ...] -> [B, prod(...)].
Tensor flatten(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Inserts a new axis and concatenates along it.
Tensor stack(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

struct BatchNormState {
  Tensor running_mean;  // [C], updated in place in training mode
  Tensor running_var;   // [C]
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalization of x [B,C,H,W] followed by gamma/beta. Training
/// mode normalizes with batch statistics (biased variance) and folds them into
/// the running estimates; eval mode uses the running estimates.
Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    BatchNormState& state, bool training);

}  // namespace sma
