/* Copyright 2026 The PGN Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// Kernels behind the layer library: convolution via im2col + GEMM,
// depthwise convolution, 2x2 average pooling, bilinear x2 upsampling and
// pointwise activations. Every forward has a matching backward that
// accumulates into caller-provided gradient buffers.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "pgn/core/tensor.hpp"

namespace pgn::ops {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  int groups = 1;

  int out_extent(int in) const { return (in + 2 * padding - kernel) / stride + 1; }
  bool depthwise() const { return groups > 1; }
  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * (in_channels / groups) * kernel * kernel;
  }
};

inline Shape conv_output_shape(const ConvGeometry& g, const Shape& in, const std::string& layer) {
  if (in.c != g.in_channels) {
    throw DimensionError(layer + ": expected " + std::to_string(g.in_channels) + " input channels, got " +
                         std::to_string(in.c));
  }
  const int ho = g.out_extent(in.h);
  const int wo = g.out_extent(in.w);
  if (ho <= 0 || wo <= 0) throw DimensionError(layer + ": input " + in.str() + " too small for kernel");
  return {in.n, g.out_channels, ho, wo};
}

// col has shape (C*k*k, (oy1-oy0)*Wo): output rows [oy0, oy1) of one image.
template <typename T>
void im2col(const T* img, int channels, int h, int w, const ConvGeometry& g, int oy0, int oy1, int wo, T* col) {
  const int k = g.kernel;
  const int s = g.stride;
  const int p = g.padding;
  const std::size_t len = static_cast<std::size_t>(oy1 - oy0) * wo;
  for (int c = 0; c < channels; ++c) {
    const T* plane = img + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * len;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * s - p + ky;
          T* dst = row + static_cast<std::size_t>(oy - oy0) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * w;
          if (s == 1) {
            const int lo = std::max(0, p - kx);
            const int hi = std::min(wo, w + p - kx);
            std::fill(dst, dst + lo, T(0));
            if (hi > lo) std::copy(src + lo - p + kx, src + hi - p + kx, dst + lo);
            std::fill(dst + std::max(lo, hi), dst + wo, T(0));
          } else {
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * s - p + kx;
              dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int channels, int h, int w, const ConvGeometry& g, int oy0, int oy1, int wo, T* img) {
  const int k = g.kernel;
  const int s = g.stride;
  const int p = g.padding;
  const std::size_t len = static_cast<std::size_t>(oy1 - oy0) * wo;
  for (int c = 0; c < channels; ++c) {
    T* plane = img + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * len;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * s - p + ky;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + static_cast<std::size_t>(oy - oy0) * wo;
          T* dst = plane + static_cast<std::size_t>(iy) * w;
          if (s == 1) {
            const int lo = std::max(0, p - kx);
            const int hi = std::min(wo, w + p - kx);
            for (int ox = lo; ox < hi; ++ox) dst[ox - p + kx] += src[ox];
            continue;
          }
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s - p + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

namespace detail {

/// Output rows per im2col block, keeping the column buffer near 256 KiB.
inline int row_block(int kk, int ho, int wo) {
  const long budget = 64 * 1024;  // elements
  const long per_row = static_cast<long>(kk) * wo;
  return static_cast<int>(std::clamp<long>(budget / std::max(1L, per_row), 1, ho));
}

template <typename T>
bool is_pointwise(const ConvGeometry& g) {
  return g.kernel == 1 && g.stride == 1 && g.padding == 0;
}

template <typename T>
void depthwise_forward(const Tensor<T>& x, const T* weight, const T* bias, const ConvGeometry& g, Tensor<T>& y) {
  const int k = g.kernel;
  const int s = g.stride;
  const int p = g.padding;
  const int h = x.h();
  const int w = x.w();
  const int ho = y.h();
  const int wo = y.w();
  for (int b = 0; b < x.n(); ++b) {
    for (int c = 0; c < x.c(); ++c) {
      const T* src = x.plane(b, c);
      const T* kern = weight + static_cast<std::size_t>(c) * k * k;
      T* dst = y.plane(b, c);
      const T b0 = bias ? bias[c] : T(0);
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          T acc = b0;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * s - p + ky;
            if (iy < 0 || iy >= h) continue;
            const T* srow = src + static_cast<std::size_t>(iy) * w;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * s - p + kx;
              if (ix >= 0 && ix < w) acc += kern[ky * k + kx] * srow[ix];
            }
          }
          dst[static_cast<std::size_t>(oy) * wo + ox] = acc;
        }
      }
    }
  }
}

template <typename T>
void depthwise_backward(const Tensor<T>& x, const T* weight, const Tensor<T>& dy, const ConvGeometry& g,
                        Tensor<T>* dx, T* dweight, T* dbias) {
  const int k = g.kernel;
  const int s = g.stride;
  const int p = g.padding;
  const int h = x.h();
  const int w = x.w();
  const int ho = dy.h();
  const int wo = dy.w();
  for (int b = 0; b < x.n(); ++b) {
    for (int c = 0; c < x.c(); ++c) {
      const T* src = x.plane(b, c);
      const T* kern = weight + static_cast<std::size_t>(c) * k * k;
      T* dkern = dweight ? dweight + static_cast<std::size_t>(c) * k * k : nullptr;
      T* dsrc = dx ? dx->plane(b, c) : nullptr;
      const T* g_out = dy.plane(b, c);
      T bias_acc = 0;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          const T go = g_out[static_cast<std::size_t>(oy) * wo + ox];
          bias_acc += go;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * s - p + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * s - p + kx;
              if (ix < 0 || ix >= w) continue;
              const std::size_t off = static_cast<std::size_t>(iy) * w + ix;
              if (dkern) dkern[ky * k + kx] += go * src[off];
              if (dsrc) dsrc[off] += go * kern[ky * k + kx];
            }
          }
        }
      }
      if (dbias) dbias[c] += bias_acc;
    }
  }
}

}  // namespace detail

/// y = conv(x, weight) + bias. weight layout (Cout, Cin/groups, k, k).
/// Only groups == 1 and depthwise (groups == Cin == Cout) are supported.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const T* weight, const T* bias, const ConvGeometry& g,
                         const std::string& layer = "conv") {
  const Shape os = conv_output_shape(g, x.shape(), layer);
  Tensor<T> y(os);
  if (g.depthwise()) {
    detail::depthwise_forward(x, weight, bias, g, y);
    return y;
  }
  const int kk = g.in_channels * g.kernel * g.kernel;
  const int hw = os.h * os.w;
  ConstMatMap<T> wmat(weight, g.out_channels, kk);
  typename Tensor<T>::Storage col;
  const bool pointwise = detail::is_pointwise<T>(g);
  const int rows = detail::row_block(kk, os.h, os.w);
  if (!pointwise) col.resize(static_cast<std::size_t>(kk) * rows * os.w);
  for (int b = 0; b < x.n(); ++b) {
    MatMap<T> out(y.image(b), g.out_channels, hw);
    if (pointwise) {
      out.noalias() = wmat * ConstMatMap<T>(x.image(b), kk, hw);
    } else {
      for (int oy = 0; oy < os.h; oy += rows) {
        const int oy1 = std::min(os.h, oy + rows);
        const int len = (oy1 - oy) * os.w;
        im2col(x.image(b), x.c(), x.h(), x.w(), g, oy, oy1, os.w, col.data());
        out.middleCols(oy * os.w, len).noalias() = wmat * ConstMatMap<T>(col.data(), kk, len);
      }
    }
    if (bias) {
      for (int c = 0; c < g.out_channels; ++c) out.row(c).array() += bias[c];
    }
  }
  return y;
}

/// Accumulates dweight/dbias and returns dx (or an empty tensor when
/// want_dx is false).
template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& x, const T* weight, const Tensor<T>& dy, const ConvGeometry& g,
                          T* dweight, T* dbias, bool want_dx) {
  Tensor<T> dx;
  if (want_dx) dx = Tensor<T>(x.shape());
  if (g.depthwise()) {
    detail::depthwise_backward(x, weight, dy, g, want_dx ? &dx : nullptr, dweight, dbias);
    return dx;
  }
  const int kk = g.in_channels * g.kernel * g.kernel;
  const int hw = dy.h() * dy.w();
  ConstMatMap<T> wmat(weight, g.out_channels, kk);
  const bool pointwise = detail::is_pointwise<T>(g);
  const int rows = detail::row_block(kk, dy.h(), dy.w());
  typename Tensor<T>::Storage col;
  typename Tensor<T>::Storage dcol;
  if (!pointwise) {
    if (dweight) col.resize(static_cast<std::size_t>(kk) * rows * dy.w());
    if (want_dx) dcol.resize(static_cast<std::size_t>(kk) * rows * dy.w());
  }
  for (int b = 0; b < x.n(); ++b) {
    ConstMatMap<T> gout(dy.image(b), g.out_channels, hw);
    if (dbias) {
      for (int c = 0; c < g.out_channels; ++c) dbias[c] += gout.row(c).sum();
    }
    if (pointwise) {
      if (dweight) {
        MatMap<T> dw(dweight, g.out_channels, kk);
        dw.noalias() += gout * ConstMatMap<T>(x.image(b), kk, hw).transpose();
      }
      if (want_dx) {
        MatMap<T> dxm(dx.image(b), kk, hw);
        dxm.noalias() = wmat.transpose() * gout;
      }
      continue;
    }
    for (int oy = 0; oy < dy.h(); oy += rows) {
      const int oy1 = std::min(dy.h(), oy + rows);
      const int len = (oy1 - oy) * dy.w();
      const auto gblock = gout.middleCols(oy * dy.w(), len);
      if (dweight) {
        im2col(x.image(b), x.c(), x.h(), x.w(), g, oy, oy1, dy.w(), col.data());
        MatMap<T> dw(dweight, g.out_channels, kk);
        dw.noalias() += gblock * ConstMatMap<T>(col.data(), kk, len).transpose();
      }
      if (want_dx) {
        MatMap<T> dcm(dcol.data(), kk, len);
        dcm.noalias() = wmat.transpose() * gblock;
        col2im(dcol.data(), x.c(), x.h(), x.w(), g, oy, oy1, dy.w(), dx.image(b));
      }
    }
  }
  return dx;
}

/// 2x2 average pooling with stride 2. Odd extents are rejected.
template <typename T>
Tensor<T> avgpool2_forward(const Tensor<T>& x, const std::string& layer = "avgpool") {
  if (x.h() % 2 != 0 || x.w() % 2 != 0) {
    throw DimensionError(layer + ": spatial size " + std::to_string(x.h()) + "x" + std::to_string(x.w()) +
                         " is not divisible by 2");
  }
  Tensor<T> y(x.n(), x.c(), x.h() / 2, x.w() / 2);
  const int w = x.w();
  for (int b = 0; b < x.n(); ++b) {
    for (int c = 0; c < x.c(); ++c) {
      const T* src = x.plane(b, c);
      T* dst = y.plane(b, c);
      for (int oy = 0; oy < y.h(); ++oy) {
        const T* r0 = src + static_cast<std::size_t>(2 * oy) * w;
        const T* r1 = r0 + w;
        for (int ox = 0; ox < y.w(); ++ox) {
          dst[static_cast<std::size_t>(oy) * y.w() + ox] =
              T(0.25) * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> avgpool2_backward(const Shape& in, const Tensor<T>& dy) {
  Tensor<T> dx(in);
  for (int b = 0; b < in.n; ++b) {
    for (int c = 0; c < in.c; ++c) {
      const T* g = dy.plane(b, c);
      T* dst = dx.plane(b, c);
      for (int oy = 0; oy < dy.h(); ++oy) {
        for (int ox = 0; ox < dy.w(); ++ox) {
          const T v = T(0.25) * g[static_cast<std::size_t>(oy) * dy.w() + ox];
          T* r0 = dst + static_cast<std::size_t>(2 * oy) * in.w + 2 * ox;
          r0[0] = v;
          r0[1] = v;
          r0[in.w] = v;
          r0[in.w + 1] = v;
        }
      }
    }
  }
  return dx;
}

namespace detail {

// Source taps for bilinear x2 upsampling with half-pixel centers.
struct BilinearTap {
  int i0;
  int i1;
  double w1;
};

inline std::vector<BilinearTap> bilinear_taps(int in, int out) {
  std::vector<BilinearTap> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace detail

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, int out_h, int out_w) {
  Tensor<T> y(x.n(), x.c(), out_h, out_w);
  const auto ty = detail::bilinear_taps(x.h(), out_h);
  const auto tx = detail::bilinear_taps(x.w(), out_w);
  for (int b = 0; b < x.n(); ++b) {
    for (int c = 0; c < x.c(); ++c) {
      const T* src = x.plane(b, c);
      T* dst = y.plane(b, c);
      for (int oy = 0; oy < out_h; ++oy) {
        const T wy = static_cast<T>(ty[oy].w1);
        const T* r0 = src + static_cast<std::size_t>(ty[oy].i0) * x.w();
        const T* r1 = src + static_cast<std::size_t>(ty[oy].i1) * x.w();
        for (int ox = 0; ox < out_w; ++ox) {
          const T wx = static_cast<T>(tx[ox].w1);
          const T top = r0[tx[ox].i0] + wx * (r0[tx[ox].i1] - r0[tx[ox].i0]);
          const T bot = r1[tx[ox].i0] + wx * (r1[tx[ox].i1] - r1[tx[ox].i0]);
          dst[static_cast<std::size_t>(oy) * out_w + ox] = top + wy * (bot - top);
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> upsample_bilinear_backward(const Shape& in, const Tensor<T>& dy) {
  Tensor<T> dx(in);
  const auto ty = detail::bilinear_taps(in.h, dy.h());
  const auto tx = detail::bilinear_taps(in.w, dy.w());
  for (int b = 0; b < in.n; ++b) {
    for (int c = 0; c < in.c; ++c) {
      const T* g = dy.plane(b, c);
      T* dst = dx.plane(b, c);
      for (int oy = 0; oy < dy.h(); ++oy) {
        const T wy = static_cast<T>(ty[oy].w1);
        T* r0 = dst + static_cast<std::size_t>(ty[oy].i0) * in.w;
        T* r1 = dst + static_cast<std::size_t>(ty[oy].i1) * in.w;
        for (int ox = 0; ox < dy.w(); ++ox) {
          const T v = g[static_cast<std::size_t>(oy) * dy.w() + ox];
          const T wx = static_cast<T>(tx[ox].w1);
          const T top = v * (T(1) - wy);
          const T bot = v * wy;
          r0[tx[ox].i0] += top * (T(1) - wx);
          r0[tx[ox].i1] += top * wx;
          r1[tx[ox].i0] += bot * (T(1) - wx);
          r1[tx[ox].i1] += bot * wx;
        }
      }
    }
  }
  return dx;
}

template <typename T>
T sigmoid(T v) {
  // Both branches stay inside [0, 1] in floating point.
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
void leaky_relu_inplace(Tensor<T>& x, T slope) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < T(0)) x[i] *= slope;
  }
}

// Backward uses the activation output; the sign of the output equals the
// sign of the input for any positive slope.
template <typename T>
void leaky_relu_backward_inplace(const Tensor<T>& y, Tensor<T>& dy, T slope) {
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(y[i] > T(0))) dy[i] *= slope;
  }
}

template <typename T>
void sigmoid_inplace(Tensor<T>& x) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = sigmoid(x[i]);
}

template <typename T>
void sigmoid_backward_inplace(const Tensor<T>& y, Tensor<T>& dy) {
  for (std::size_t i = 0; i < y.size(); ++i) dy[i] *= y[i] * (T(1) - y[i]);
}

}  // namespace pgn::ops
