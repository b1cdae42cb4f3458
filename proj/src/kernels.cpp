#include "sma/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <memory>
#include <vector>

namespace sma::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using Vec = Eigen::Map<Eigen::VectorXd>;
using ConstVec = Eigen::Map<const Eigen::VectorXd>;
using StridedVec = Eigen::Map<Eigen::VectorXd, 0, Eigen::InnerStride<>>;
using ConstStridedVec = Eigen::Map<const Eigen::VectorXd, 0, Eigen::InnerStride<>>;
using PlaneMat = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstPlaneMat = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// Uninitialized scratch.
std::unique_ptr<double[]> scratch(std::size_t n) { return std::unique_ptr<double[]>(new double[n]); }

void zero(double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) p[i] = 0.0;
}

// Output columns [lo, hi) whose input column ox*stride + kx - pad is in range.
void valid_range(std::size_t kx, std::size_t stride, std::size_t pad, std::size_t w, std::size_t ow,
                 std::size_t& lo, std::size_t& hi) {
  lo = kx >= pad ? 0 : (pad - kx + stride - 1) / stride;
  const long last = static_cast<long>(w) - 1 + static_cast<long>(pad) - static_cast<long>(kx);
  hi = last < 0 ? 0 : std::min(ow, static_cast<std::size_t>(last) / stride + 1);
  if (hi < lo) hi = lo;
}

// Unfolds one group of one sample into col [cg*k*k, oh*ow].
void im2col(const double* in, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, double* col) {
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = in + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = col + ((c * k + ky) * k + kx) * oh * ow;
        std::size_t lo, hi;
        valid_range(kx, stride, pad, w, ow, lo, hi);
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          double* dst = row + oy * ow;
          if (iy < 0 || iy >= static_cast<long>(h)) {
            zero(dst, ow);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * w + kx - pad;
          zero(dst, lo);
          if (stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride];
          }
          zero(dst + hi, ow - hi);
        }
      }
    }
  }
}

// Folds col back into the input layout, accumulating.
void col2im(const double* col, std::size_t channels, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, double* in) {
  for (std::size_t c = 0; c < channels; ++c) {
    double* plane = in + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = col + ((c * k + ky) * k + kx) * oh * ow;
        std::size_t lo, hi;
        valid_range(kx, stride, pad, w, ow, lo, hi);
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * w + kx - pad;
          const double* src = row + oy * ow;
          if (stride == 1) {
            Vec(dst + lo, hi - lo) += ConstVec(src + lo, hi - lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * stride] += src[ox];
          }
        }
      }
    }
  }
}

// Direct kernel for one input plane per output plane (groups == channels).
void depthwise_forward(const double* in, const double* wk, std::size_t h, std::size_t w, std::size_t k,
                       std::size_t stride, std::size_t pad, std::size_t oh, std::size_t ow, double* out) {
  for (std::size_t ky = 0; ky < k; ++ky) {
    for (std::size_t kx = 0; kx < k; ++kx) {
      const double wv = wk[ky * k + kx];
      std::size_t lo, hi;
      valid_range(kx, stride, pad, w, ow, lo, hi);
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        const double* src = in + static_cast<std::size_t>(iy) * w + kx - pad;
        double* dst = out + oy * ow;
        const auto n = static_cast<Eigen::Index>(hi - lo);
        if (stride == 1) {
          Vec(dst + lo, n) += wv * ConstVec(src + lo, n);
        } else {
          Vec(dst + lo, n) += wv * ConstStridedVec(src + lo * stride, n, Eigen::InnerStride<>(stride));
        }
      }
    }
  }
}

void depthwise_backward(const double* in, const double* wk, const double* gout, std::size_t h,
                        std::size_t w, std::size_t k, std::size_t stride, std::size_t pad, std::size_t oh,
                        std::size_t ow, double* gin, double* gw) {
  for (std::size_t ky = 0; ky < k; ++ky) {
    for (std::size_t kx = 0; kx < k; ++kx) {
      const double wv = wk[ky * k + kx];
      std::size_t lo, hi;
      valid_range(kx, stride, pad, w, ow, lo, hi);
      double acc = 0.0;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        const std::size_t off = static_cast<std::size_t>(iy) * w + kx - pad;
        const auto n = static_cast<Eigen::Index>(hi - lo);
        const Eigen::InnerStride<> st(stride);
        ConstVec g(gout + oy * ow + lo, n);
        if (stride == 1) {
          if (gw) acc += g.dot(ConstVec(in + off + lo, n));
          if (gin) Vec(gin + off + lo, n) += wv * g;
        } else {
          if (gw) acc += g.dot(ConstStridedVec(in + off + lo * stride, n, st));
          if (gin) StridedVec(gin + off + lo * stride, n, st) += wv * g;
        }
      }
      if (gw) gw[ky * k + kx] += acc;
    }
  }
}

// Stride-1 layout: each input plane zero-padded to hp x wp (plus k slack
// values) so that kernel tap (ky, kx) reads a contiguous window starting at
// ky*wp + kx. Outputs are produced oh x wp, the last wp - ow columns unused.
struct PaddedPlanes {
  std::size_t hp, wp, plane, cols;
};

PaddedPlanes padded_layout(const ConvGeometry& g) {
  PaddedPlanes p;
  p.hp = g.height + 2 * g.padding;
  p.wp = g.width + 2 * g.padding;
  p.plane = p.hp * p.wp + g.kernel;
  p.cols = g.out_height() * p.wp;
  return p;
}

void pad_planes(const double* in, std::size_t channels, const ConvGeometry& g, const PaddedPlanes& p,
                double* dst) {
  const std::size_t pad = g.padding;
  for (std::size_t c = 0; c < channels; ++c) {
    const double* src = in + c * g.height * g.width;
    double* plane = dst + c * p.plane;
    zero(plane, pad * p.wp);
    for (std::size_t y = 0; y < g.height; ++y) {
      double* row = plane + (y + pad) * p.wp;
      zero(row, pad);
      std::copy(src + y * g.width, src + (y + 1) * g.width, row + pad);
      zero(row + pad + g.width, pad);
    }
    zero(plane + (pad + g.height) * p.wp, p.plane - (pad + g.height) * p.wp);
  }
}

// Weights regrouped per tap: taps[t] is the og x cg matrix for tap t.
void split_taps(const double* weight, std::size_t og, std::size_t cg, std::size_t taps, double* out) {
  for (std::size_t o = 0; o < og; ++o) {
    for (std::size_t c = 0; c < cg; ++c) {
      const double* w = weight + (o * cg + c) * taps;
      for (std::size_t t = 0; t < taps; ++t) out[(t * og + o) * cg + c] = w[t];
    }
  }
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> out) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), ohw = oh * ow;
  const std::size_t cg = g.in_channels / g.groups;
  const std::size_t og = g.out_channels / g.groups;
  const std::size_t taps = g.kernel * g.kernel;
  const std::size_t kk = cg * taps;
  const bool depthwise = cg == 1 && og == 1;
  const bool pointwise = g.kernel == 1 && g.padding == 0 && g.stride == 1;
  const bool shifted = !depthwise && !pointwise && g.stride == 1;
  const PaddedPlanes pp = padded_layout(g);
  std::unique_ptr<double[]> col, tap_w, ybuf;
  if (shifted) {
    col = scratch(cg * pp.plane);
    tap_w = scratch(g.groups * taps * og * cg);
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      split_taps(weight.data() + grp * og * kk, og, cg, taps, tap_w.get() + grp * taps * og * cg);
    }
    ybuf = scratch(og * pp.cols);
  } else if (!depthwise && !pointwise) {
    col = scratch(kk * ohw);
  }
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      const double* in = input.data() + (b * g.in_channels + grp * cg) * g.height * g.width;
      double* dst = out.data() + (b * g.out_channels + grp * og) * ohw;
      ConstMapMat wmat(weight.data() + grp * og * kk, og, kk);
      MapMat omat(dst, og, ohw);
      if (depthwise) {
        zero(dst, ohw);
        depthwise_forward(in, weight.data() + grp * kk, g.height, g.width, g.kernel, g.stride, g.padding, oh,
                          ow, dst);
      } else if (pointwise) {
        omat.noalias() = wmat * ConstMapMat(in, cg, ohw);
      } else if (shifted) {
        pad_planes(in, cg, g, pp, col.get());
        MapMat y(ybuf.get(), og, pp.cols);
        const double* tw = tap_w.get() + grp * taps * og * cg;
        for (std::size_t t = 0; t < taps; ++t) {
          ConstMapMat wt(tw + t * og * cg, og, cg);
          ConstPlaneMat xs(col.get() + (t / g.kernel) * pp.wp + t % g.kernel, cg, pp.cols,
                           Eigen::OuterStride<>(pp.plane));
          if (t == 0) {
            y.noalias() = wt * xs;
          } else {
            y.noalias() += wt * xs;
          }
        }
        for (std::size_t o = 0; o < og; ++o) {
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const double* src = ybuf.get() + o * pp.cols + oy * pp.wp;
            std::copy(src, src + ow, dst + o * ohw + oy * ow);
          }
        }
      } else {
        im2col(in, cg, g.height, g.width, g.kernel, g.stride, g.padding, oh, ow, col.get());
        omat.noalias() = wmat * ConstMapMat(col.get(), kk, ohw);
      }
    }
    if (!bias.empty()) {
      for (std::size_t o = 0; o < g.out_channels; ++o) {
        double* dst = out.data() + (b * g.out_channels + o) * ohw;
        const double bo = bias[o];
        for (std::size_t i = 0; i < ohw; ++i) dst[i] += bo;
      }
    }
  }
}

void conv2d_backward(const ConvGeometry& g, std::span<const double> input,
                     std::span<const double> weight, std::span<const double> grad_out,
                     std::span<double> grad_input, std::span<double> grad_weight,
                     std::span<double> grad_bias) {
  const std::size_t oh = g.out_height(), ow = g.out_width(), ohw = oh * ow;
  const std::size_t cg = g.in_channels / g.groups;
  const std::size_t og = g.out_channels / g.groups;
  const std::size_t taps = g.kernel * g.kernel;
  const std::size_t kk = cg * taps;
  const std::size_t hw = g.height * g.width;
  const bool depthwise = cg == 1 && og == 1;
  const bool pointwise = g.kernel == 1 && g.padding == 0 && g.stride == 1;
  const bool shifted = !depthwise && !pointwise && g.stride == 1;
  const bool want_w = !grad_weight.empty(), want_in = !grad_input.empty();
  const PaddedPlanes pp = padded_layout(g);
  std::unique_ptr<double[]> col, tap_w, tap_gw, gbuf, gcol;
  if (shifted) {
    col = scratch(cg * pp.plane);
    gcol = scratch(cg * pp.plane);
    tap_w = scratch(g.groups * taps * og * cg);
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      split_taps(weight.data() + grp * og * kk, og, cg, taps, tap_w.get() + grp * taps * og * cg);
    }
    tap_gw = scratch(g.groups * taps * og * cg);
    zero(tap_gw.get(), g.groups * taps * og * cg);
    gbuf = scratch(og * pp.cols);
  } else if (!depthwise && !pointwise) {
    col = scratch(kk * ohw);
  }
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      const double* in = input.data() + (b * g.in_channels + grp * cg) * hw;
      const double* go = grad_out.data() + (b * g.out_channels + grp * og) * ohw;
      double* gin = want_in ? grad_input.data() + (b * g.in_channels + grp * cg) * hw : nullptr;
      ConstMapMat gout(go, og, ohw);
      ConstMapMat wmat(weight.data() + grp * og * kk, og, kk);
      if (depthwise) {
        depthwise_backward(in, weight.data() + grp * kk, go, g.height, g.width, g.kernel, g.stride, g.padding,
                           oh, ow, gin, want_w ? grad_weight.data() + grp * kk : nullptr);
      } else if (pointwise) {
        if (want_w) {
          MapMat(grad_weight.data() + grp * og * kk, og, kk).noalias() += gout * ConstMapMat(in, cg, hw).transpose();
        }
        if (want_in) MapMat(gin, cg, hw).noalias() += wmat.transpose() * gout;
      } else if (shifted) {
        // Gradient in the padded-width layout, zero in the unused columns.
        double* gy = gbuf.get();
        for (std::size_t o = 0; o < og; ++o) {
          for (std::size_t oy = 0; oy < oh; ++oy) {
            double* row = gy + o * pp.cols + oy * pp.wp;
            std::copy(go + o * ohw + oy * ow, go + o * ohw + (oy + 1) * ow, row);
            zero(row + ow, pp.wp - ow);
          }
        }
        ConstMapMat gymat(gy, og, pp.cols);
        if (want_w) pad_planes(in, cg, g, pp, col.get());
        if (want_in) zero(gcol.get(), cg * pp.plane);
        const double* tw = tap_w.get() + grp * taps * og * cg;
        double* tgw = tap_gw.get() + grp * taps * og * cg;
        for (std::size_t t = 0; t < taps; ++t) {
          const std::size_t off = (t / g.kernel) * pp.wp + t % g.kernel;
          if (want_w) {
            ConstPlaneMat xs(col.get() + off, cg, pp.cols, Eigen::OuterStride<>(pp.plane));
            MapMat(tgw + t * og * cg, og, cg).noalias() += gymat * xs.transpose();
          }
          if (want_in) {
            PlaneMat gxs(gcol.get() + off, cg, pp.cols, Eigen::OuterStride<>(pp.plane));
            gxs.noalias() += ConstMapMat(tw + t * og * cg, og, cg).transpose() * gymat;
          }
        }
        if (want_in) {
          for (std::size_t c = 0; c < cg; ++c) {
            for (std::size_t y = 0; y < g.height; ++y) {
              const double* src = gcol.get() + c * pp.plane + (y + g.padding) * pp.wp + g.padding;
              Vec(gin + c * hw + y * g.width, static_cast<Eigen::Index>(g.width)) +=
                  ConstVec(src, static_cast<Eigen::Index>(g.width));
            }
          }
        }
      } else {
        if (want_w) {
          im2col(in, cg, g.height, g.width, g.kernel, g.stride, g.padding, oh, ow, col.get());
          MapMat(grad_weight.data() + grp * og * kk, og, kk).noalias() +=
              gout * ConstMapMat(col.get(), kk, ohw).transpose();
        }
        if (want_in) {
          MapMat cmat(col.get(), kk, ohw);
          cmat.noalias() = wmat.transpose() * gout;
          col2im(col.get(), cg, g.height, g.width, g.kernel, g.stride, g.padding, oh, ow, gin);
        }
      }
    }
    if (!grad_bias.empty()) {
      for (std::size_t o = 0; o < g.out_channels; ++o) {
        const double* src = grad_out.data() + (b * g.out_channels + o) * ohw;
        double acc = 0.0;
        for (std::size_t i = 0; i < ohw; ++i) acc += src[i];
        grad_bias[o] += acc;
      }
    }
  }
  if (shifted && want_w) {
    for (std::size_t grp = 0; grp < g.groups; ++grp) {
      const double* tgw = tap_gw.get() + grp * taps * og * cg;
      double* gw = grad_weight.data() + grp * og * kk;
      for (std::size_t o = 0; o < og; ++o) {
        for (std::size_t c = 0; c < cg; ++c) {
          for (std::size_t t = 0; t < taps; ++t) gw[(o * cg + c) * taps + t] += tgw[(t * og + o) * cg + c];
        }
      }
    }
  }
}

}  // namespace sma::kernels
