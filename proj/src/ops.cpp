#include "sma/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Core>

#include "sma/kernels.hpp"

namespace sma {

namespace {

// Grad buffer of an input, or nullptr when it does not take a gradient.
double* grad_of(const Tensor& t) {
  if (!t.defined() || !t.requires_grad()) return nullptr;
  return t.node()->grad_buffer().data();
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

void require_axis(const Tensor& t, std::size_t axis, const char* op) {
  if (axis >= t.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for " +
                         shape_str(t.shape()));
  }
}

// outer x extent x inner decomposition around one axis.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// Right-aligned singleton broadcasting of two operands.
struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;  // per output axis, 0 when broadcast
  bool same = false;
};

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank - a.size(), 1), pb(rank - b.size(), 1);
  pa.insert(pa.end(), a.begin(), a.end());
  pb.insert(pb.end(), b.begin(), b.end());
  p.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] == pb[i] || pb[i] == 1) {
      p.out[i] = pa[i];
    } else if (pa[i] == 1) {
      p.out[i] = pb[i];
    } else {
      throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                           " do not broadcast");
    }
  }
  auto sa = contiguous_strides(pa), sb = contiguous_strides(pb);
  p.stride_a.resize(rank);
  p.stride_b.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    p.stride_a[i] = pa[i] == 1 ? 0 : sa[i];
    p.stride_b[i] = pb[i] == 1 ? 0 : sb[i];
  }
  return p;
}

// Calls f(out_index, a_index, b_index) over the output in row-major order.
template <typename F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  const std::size_t n = numel(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t rank = p.out.size();
  if (rank == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  const std::size_t last = rank - 1;
  const std::size_t inner = p.out[last];
  const std::size_t sa = p.stride_a[last], sb = p.stride_b[last];
  for (std::size_t o = 0; o < n; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(o + j, ia + j * sa, ib + j * sb);
    // advance the odometer over the leading axes
    for (std::size_t ax = last; ax-- > 0;) {
      ++idx[ax];
      ia += p.stride_a[ax];
      ib += p.stride_b[ax];
      if (idx[ax] < p.out[ax]) break;
      ia -= p.stride_a[ax] * idx[ax];
      ib -= p.stride_b[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

template <typename Fwd, typename GradA, typename GradB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, GradA ga, GradB gb) {
  Broadcast plan = plan_broadcast(a.shape(), b.shape(), name);
  Buffer out(numel(plan.out));
  auto av = a.data(), bv = b.data();
  for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = fwd(av[i], bv[j]); });
  return make_result(plan.out, std::move(out), {a, b},
                     [a, b, plan, ga, gb](const TensorNode& self) {
                       double* da = grad_of(a);
                       double* db = grad_of(b);
                       auto av = a.data(), bv = b.data();
                       const double* g = self.grad.data();
                       for_each_broadcast(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
                         if (da) da[i] += g[o] * ga(av[i], bv[j]);
                         if (db) db[j] += g[o] * gb(av[i], bv[j]);
                       });
                     },
                     name);
}

template <typename Fwd, typename Deriv>
Tensor unary_op(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  auto xv = x.data();
  Buffer out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(x.shape(), std::move(out), {x},
                     [x, deriv](const TensorNode& self) {
                       double* dx = grad_of(x);
                       if (!dx) return;
                       const double* xv = x.data().data();
                       const double* g = self.grad.data();
                       const double* y = self.value.data();
                       for (std::size_t i = 0, n = self.value.size(); i < n; ++i) {
                         dx[i] += g[i] * deriv(xv[i], y[i]);
                       }
                     },
                     name);
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::size_t same_padding(std::size_t kernel) {
  if (kernel % 2 == 0) throw ConfigError("conv2d: 'same' padding needs an odd kernel, got " + std::to_string(kernel));
  return kernel / 2;
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions opt) {
  require_rank(input, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  if (opt.groups == 0 || opt.stride == 0) throw ConfigError("conv2d: stride and groups must be positive");
  kernels::ConvGeometry g;
  g.batch = input.dim(0);
  g.in_channels = input.dim(1);
  g.height = input.dim(2);
  g.width = input.dim(3);
  g.out_channels = weight.dim(0);
  g.kernel = weight.dim(2);
  g.stride = opt.stride;
  g.padding = opt.padding;
  g.groups = opt.groups;
  if (weight.dim(3) != g.kernel) throw DimensionError("conv2d: kernel must be square");
  if (g.in_channels % g.groups || g.out_channels % g.groups ||
      weight.dim(1) * g.groups != g.in_channels) {
    throw DimensionError("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                         shape_str(input.shape()) + " at groups=" + std::to_string(g.groups));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.out_channels)) {
    throw DimensionError("conv2d: bias must be [" + std::to_string(g.out_channels) + "]");
  }
  if (g.height + 2 * g.padding < g.kernel || g.width + 2 * g.padding < g.kernel) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  Shape out_shape{g.batch, g.out_channels, g.out_height(), g.out_width()};
  Buffer out(numel(out_shape));
  std::span<const double> bias_span = bias.defined() ? bias.data() : std::span<const double>{};
  kernels::conv2d_forward(g, input.data(), weight.data(), bias_span, out);
  return make_result(std::move(out_shape), std::move(out), {input, weight, bias},
                     [input, weight, bias, g](const TensorNode& self) {
                       auto span_of = [](const Tensor& t) -> std::span<double> {
                         double* p = grad_of(t);
                         return p ? std::span<double>(p, t.numel()) : std::span<double>{};
                       };
                       kernels::conv2d_backward(g, input.data(), weight.data(), self.grad,
                                                span_of(input), span_of(weight), span_of(bias));
                     },
                     "conv2d");
}

Tensor max_pool2d(const Tensor& input, std::size_t kernel, std::size_t stride, std::size_t padding) {
  require_rank(input, 4, "max_pool2d");
  const std::size_t b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h + 2 * padding < kernel || w + 2 * padding < kernel || stride == 0) {
    throw DimensionError("max_pool2d: window does not fit");
  }
  const std::size_t oh = (h + 2 * padding - kernel) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kernel) / stride + 1;
  Shape out_shape{b, c, oh, ow};
  Buffer out(numel(out_shape));
  std::vector<std::size_t> arg(out.size());
  auto xv = input.data();
  for (std::size_t p = 0; p < b * c; ++p) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_i = 0;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            const std::size_t i = p * h * w + static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
            if (xv[i] > best) {
              best = xv[i];
              best_i = i;
            }
          }
        }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = best;
        arg[o] = best_i;
      }
    }
  }
  return make_result(std::move(out_shape), std::move(out), {input},
                     [input, arg = std::move(arg)](const TensorNode& self) {
                       double* dx = grad_of(input);
                       if (!dx) return;
                       for (std::size_t o = 0; o < arg.size(); ++o) dx[arg[o]] += self.grad[o];
                     },
                     "max_pool2d");
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(x, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary_op(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
                  [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
  return unary_op(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  if (checked_mode()) {
    for (double v : x.data()) {
      if (!(v > 0.0)) throw NumericError("log: non-positive input");
    }
  }
  return unary_op(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_axis(x, axis, "softmax");
  const AxisSplit s = split_at(x.shape(), axis);
  auto xv = x.data();
  Buffer out(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.extent; ++k) mx = std::max(mx, xv[base + k * s.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const double e = std::exp(xv[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= total;
    }
  }
  return make_result(x.shape(), std::move(out), {x},
                     [x, s](const TensorNode& self) {
                       double* dx = grad_of(x);
                       if (!dx) return;
                       const auto& y = self.value;
                       const auto& g = self.grad;
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         for (std::size_t in = 0; in < s.inner; ++in) {
                           const std::size_t base = o * s.extent * s.inner + in;
                           double dot = 0.0;
                           for (std::size_t k = 0; k < s.extent; ++k) {
                             dot += g[base + k * s.inner] * y[base + k * s.inner];
                           }
                           for (std::size_t k = 0; k < s.extent; ++k) {
                             const std::size_t i = base + k * s.inner;
                             dx[i] += y[i] * (g[i] - dot);
                           }
                         }
                       }
                     },
                     "softmax");
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const std::size_t b = x.dim(0), din = x.dim(1), dout = weight.dim(0);
  if (weight.dim(1) != din) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != dout)) {
    throw DimensionError("linear: bias must be [" + std::to_string(dout) + "]");
  }
  auto xv = x.data(), wv = weight.data();
  Buffer out(b * dout);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t o = 0; o < dout; ++o) {
      double acc = bias.defined() ? bias[o] : 0.0;
      for (std::size_t k = 0; k < din; ++k) acc += xv[i * din + k] * wv[o * din + k];
      out[i * dout + o] = acc;
    }
  }
  return make_result({b, dout}, std::move(out), {x, weight, bias},
                     [x, weight, bias, b, din, dout](const TensorNode& self) {
                       double* dx = grad_of(x);
                       double* dw = grad_of(weight);
                       double* db = grad_of(bias);
                       auto xv = x.data(), wv = weight.data();
                       const auto& g = self.grad;
                       for (std::size_t i = 0; i < b; ++i) {
                         for (std::size_t o = 0; o < dout; ++o) {
                           const double go = g[i * dout + o];
                           if (db) db[o] += go;
                           for (std::size_t k = 0; k < din; ++k) {
                             if (dx) dx[i * din + k] += go * wv[o * din + k];
                             if (dw) dw[o * din + k] += go * xv[i * din + k];
                           }
                         }
                       }
                     },
                     "linear");
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "add", [](double u, double v) { return u + v; },
                   [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "sub", [](double u, double v) { return u - v; },
                   [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "mul", [](double u, double v) { return u * v; },
                   [](double, double v) { return v; }, [](double u, double) { return u; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary_op(x, "scale", [factor](double v) { return v * factor; },
                  [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary_op(x, "add_scalar", [value](double v) { return v + value; },
                  [](double, double) { return 1.0; });
}

Tensor hinge_sub(const Tensor& x, double delta) {
  return unary_op(x, "hinge_sub", [delta](double v) { return v > delta ? v - delta : 0.0; },
                  [delta](double v, double) { return v > delta ? 1.0 : 0.0; });
}

Tensor elementwise(const Tensor& a, const Tensor& b, ElementwiseKind kind) {
  switch (kind) {
    case ElementwiseKind::kMul:
      return mul(a, b);
    case ElementwiseKind::kAdd:
      return add(a, b);
    case ElementwiseKind::kHingeSub:
      return hinge_sub(a, b.item());
  }
  throw ConfigError("elementwise: unknown kind");
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_result({}, {acc}, {x},
                     [x](const TensorNode& self) {
                       double* dx = grad_of(x);
                       if (!dx) return;
                       const double g = self.grad[0];
                       for (std::size_t i = 0, n = x.numel(); i < n; ++i) dx[i] += g;
                     },
                     "sum");
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_axes(const Tensor& x, const std::vector<std::size_t>& axes) {
  Shape out_shape = x.shape();
  std::vector<bool> reduced(x.rank(), false);
  for (auto a : axes) {
    require_axis(x, a, "sum_axes");
    reduced[a] = true;
    out_shape[a] = 1;
  }
  // Walk the input in row-major order with the output broadcast against it.
  Broadcast plan = plan_broadcast(x.shape(), out_shape, "sum_axes");
  Buffer out(numel(out_shape), 0.0);
  auto xv = x.data();
  for_each_broadcast(plan, [&](std::size_t i, std::size_t, std::size_t o) { out[o] += xv[i]; });
  return make_result(std::move(out_shape), std::move(out), {x},
                     [x, plan = std::move(plan)](const TensorNode& self) {
                       double* dx = grad_of(x);
                       if (!dx) return;
                       const double* g = self.grad.data();
                       for_each_broadcast(plan, [&](std::size_t i, std::size_t, std::size_t o) { dx[i] += g[o]; });
                     },
                     "sum_axes");
}

Tensor avg_pool(const Tensor& x, const std::vector<std::size_t>& axes) {
  std::size_t count = 1;
  for (auto a : axes) {
    require_axis(x, a, "avg_pool");
    count *= x.dim(a);
  }
  if (count == 0) throw DimensionError("avg_pool: empty reduction");
  return scale(sum_axes(x, axes), 1.0 / static_cast<double>(count));
}

Tensor max_over_axis(const Tensor& x, std::size_t axis) {
  require_axis(x, axis, "max_over_axis");
  const AxisSplit s = split_at(x.shape(), axis);
  if (s.extent == 0) throw DimensionError("max_over_axis: empty axis");
  Shape out_shape = x.shape();
  out_shape[axis] = 1;
  auto xv = x.data();
  Buffer out(s.outer * s.inner);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      std::size_t best = base;
      for (std::size_t k = 1; k < s.extent; ++k) {
        if (xv[base + k * s.inner] > xv[best]) best = base + k * s.inner;
      }
      out[o * s.inner + in] = xv[best];
      arg[o * s.inner + in] = best;
    }
  }
  return make_result(std::move(out_shape), std::move(out), {x},
                     [x, arg = std::move(arg)](const TensorNode& self) {
                       double* dx = grad_of(x);
                       if (!dx) return;
                       for (std::size_t i = 0; i < arg.size(); ++i) dx[arg[i]] += self.grad[i];
                     },
                     "max_over_axis");
}

Tensor max_over_others(const Tensor& x, std::size_t axis) {
  require_axis(x, axis, "max_over_others");
  const AxisSplit s = split_at(x.shape(), axis);
  auto xv = x.data();
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  Buffer out(xv.size(), 0.0);
  std::vector<std::size_t> arg(xv.size(), kNone);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      // Largest and second-largest entries, each the lowest index among ties.
      std::size_t first = kNone, second = kNone;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const std::size_t i = base + k * s.inner;
        if (first == kNone || xv[i] > xv[first]) {
          second = first;
          first = i;
        } else if (second == kNone || xv[i] > xv[second]) {
          second = i;
        }
      }
      for (std::size_t k = 0; k < s.extent; ++k) {
        const std::size_t i = base + k * s.inner;
        const std::size_t src = (i == first) ? second : first;
        if (src == kNone) continue;
        out[i] = xv[src];
        arg[i] = src;
      }
    }
  }
  return make_result(x.shape(), std::move(out), {x},
                     [x, arg = std::move(arg)](const TensorNode& self) {
                       double* dx = grad_of(x);
                       if (!dx) return;
                       for (std::size_t i = 0; i < arg.size(); ++i) {
                         if (arg[i] != kNone) dx[arg[i]] += self.grad[i];
                       }
                     },
                     "max_over_others");
}

Tensor masked_avg_pool(const Tensor& x, const Tensor& masks) {
  require_rank(x, 4, "masked_avg_pool");
  require_rank(masks, 4, "masked_avg_pool");
  const std::size_t b = x.dim(0), c = x.dim(1), n = masks.dim(1), hw = x.dim(2) * x.dim(3);
  if (masks.dim(0) != b || masks.dim(2) != x.dim(2) || masks.dim(3) != x.dim(3)) {
    throw DimensionError("masked_avg_pool: masks " + shape_str(masks.shape()) + " vs input " + shape_str(x.shape()));
  }
  if (hw == 0) throw DimensionError("masked_avg_pool: empty spatial extent");
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<RowMat>;
  using ConstMap = Eigen::Map<const RowMat>;
  const double inv = 1.0 / static_cast<double>(hw);
  Buffer out(b * n * c);
  for (std::size_t i = 0; i < b; ++i) {
    ConstMap xi(x.data().data() + i * c * hw, c, hw);
    ConstMap mi(masks.data().data() + i * n * hw, n, hw);
    Map(out.data() + i * n * c, n, c).noalias() = inv * (mi * xi.transpose());
  }
  return make_result({b, n, c}, std::move(out), {x, masks},
                     [x, masks, b, c, n, hw, inv](const TensorNode& self) {
                       double* dx = grad_of(x);
                       double* dm = grad_of(masks);
                       for (std::size_t i = 0; i < b; ++i) {
                         ConstMap g(self.grad.data() + i * n * c, n, c);
                         if (dx) {
                           ConstMap mi(masks.data().data() + i * n * hw, n, hw);
                           Map(dx + i * c * hw, c, hw).noalias() += inv * (g.transpose() * mi);
                         }
                         if (dm) {
                           ConstMap xi(x.data().data() + i * c * hw, c, hw);
                           Map(dm + i * n * hw, n, hw).noalias() += inv * (g * xi);
                         }
                       }
                     },
                     "masked_avg_pool");
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Buffer out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x},
                     [x](const TensorNode& self) {
                       double* dx = grad_of(x);
                       if (!dx) return;
                       for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i];
                     },
                     "reshape");
}

Tensor flatten(const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("flatten: needs a batch axis");
  return reshape(x, {x.dim(0), x.numel() / std::max<std::size_t>(x.dim(0), 1)});
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  require_axis(parts[0], axis, "concat");
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != out_shape.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < p.rank(); ++i) {
      if (i != axis && p.dim(i) != out_shape[i]) throw DimensionError("concat: shape mismatch");
    }
    out_shape[axis] += p.dim(axis);
  }
  const AxisSplit s = split_at(out_shape, axis);
  Buffer out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.dim(axis) * s.inner;
    auto pv = p.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(pv.begin() + o * len, len, out.begin() + o * s.extent * s.inner + off * s.inner);
    }
    off += p.dim(axis);
  }
  return make_result(std::move(out_shape), std::move(out), parts,
                     [parts, offsets, axis, s](const TensorNode& self) {
                       for (std::size_t pi = 0; pi < parts.size(); ++pi) {
                         double* dp = grad_of(parts[pi]);
                         if (!dp) continue;
                         const std::size_t len = parts[pi].dim(axis) * s.inner;
                         for (std::size_t o = 0; o < s.outer; ++o) {
                           const double* src = self.grad.data() + o * s.extent * s.inner + offsets[pi] * s.inner;
                           for (std::size_t j = 0; j < len; ++j) dp[o * len + j] += src[j];
                         }
                       }
                     },
                     "concat");
}

Tensor stack(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("stack: no inputs");
  if (axis > parts[0].rank()) throw DimensionError("stack: axis out of range");
  std::vector<Tensor> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin() + static_cast<long>(axis), 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  require_axis(x, axis, "slice");
  if (start + length > x.dim(axis)) throw DimensionError("slice: range out of bounds");
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  Buffer out(numel(out_shape));
  auto xv = x.data();
  const std::size_t len = length * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.begin() + o * s.extent * s.inner + start * s.inner, len, out.begin() + o * len);
  }
  return make_result(std::move(out_shape), std::move(out), {x},
                     [x, s, start, len](const TensorNode& self) {
                       double* dx = grad_of(x);
                       if (!dx) return;
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         double* dst = dx + o * s.extent * s.inner + start * s.inner;
                         for (std::size_t j = 0; j < len; ++j) dst[j] += self.grad[o * len + j];
                       }
                     },
                     "slice");
}

Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                    bool training) {
  require_rank(x, 4, "batch_norm2d");
  const std::size_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const std::size_t count = b * hw;
  if (gamma.numel() != c || beta.numel() != c || state.running_mean.numel() != c ||
      state.running_var.numel() != c) {
    throw DimensionError("batch_norm2d: parameter size does not match " + std::to_string(c) + " channels");
  }
  auto xv = x.data();
  std::vector<double> mu(c), inv_std(c);
  if (training) {
    if (count < 2) throw DimensionError("batch_norm2d: training mode needs more than one value per channel");
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t n = 0; n < b; ++n) {
        const double* p = xv.data() + (n * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(count);
      double v = 0.0;
      for (std::size_t n = 0; n < b; ++n) {
        const double* p = xv.data() + (n * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) v += (p[i] - m) * (p[i] - m);
      }
      const double var = v / static_cast<double>(count);
      mu[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(var + state.eps);
      rm[ch] = (1.0 - state.momentum) * rm[ch] + state.momentum * m;
      rv[ch] = (1.0 - state.momentum) * rv[ch] +
               state.momentum * v / static_cast<double>(count - 1);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mu[ch] = state.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(state.running_var[ch] + state.eps);
    }
  }
  Buffer xhat(xv.size()), out(xv.size());
  auto gv = gamma.data(), bv = beta.data();
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (n * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        xhat[base + i] = (xv[base + i] - mu[ch]) * inv_std[ch];
        out[base + i] = gv[ch] * xhat[base + i] + bv[ch];
      }
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [x, gamma, beta, training, b, c, hw, inv_std = std::move(inv_std),
                      xhat = std::move(xhat)](const TensorNode& self) {
                       double* dx = grad_of(x);
                       double* dg = grad_of(gamma);
                       double* db = grad_of(beta);
                       const double* g = self.grad.data();
                       auto gv = gamma.data();
                       const double count = static_cast<double>(b * hw);
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         double sum_g = 0.0, sum_gx = 0.0;
                         for (std::size_t n = 0; n < b; ++n) {
                           const std::size_t base = (n * c + ch) * hw;
                           for (std::size_t i = 0; i < hw; ++i) {
                             sum_g += g[base + i];
                             sum_gx += g[base + i] * xhat[base + i];
                           }
                         }
                         if (dg) dg[ch] += sum_gx;
                         if (db) db[ch] += sum_g;
                         if (!dx) continue;
                         const double k = gv[ch] * inv_std[ch];
                         for (std::size_t n = 0; n < b; ++n) {
                           const std::size_t base = (n * c + ch) * hw;
                           const double mg = training ? sum_g / count : 0.0;
                           const double mgx = training ? sum_gx / count : 0.0;
                           for (std::size_t i = 0; i < hw; ++i) {
                             dx[base + i] += k * (g[base + i] - mg - xhat[base + i] * mgx);
                           }
                         }
                       }
                     },
                     "batch_norm2d");
}

}  // namespace sma
