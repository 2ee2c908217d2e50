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

// Gradient-synthesis heads. A backbone emits a 3-channel field B(yhat, y);
// a head turns it into a synthetic gradient, optionally through a proxy
// target P that is held constant while forming the MSE gradient
//   G = alpha * 2 / (C*H*W) * (yhat - P).

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "pgn/core/normalization.hpp"
#include "pgn/core/ops.hpp"
#include "pgn/core/tensor.hpp"

namespace pgn {

enum class HeadKind { direct, unconstrained_proxy, constrained_proxy, hybrid };

inline std::string_view to_string(HeadKind k) {
  switch (k) {
    case HeadKind::direct: return "direct";
    case HeadKind::unconstrained_proxy: return "unconstrained_proxy";
    case HeadKind::constrained_proxy: return "constrained_proxy";
    case HeadKind::hybrid: return "hybrid";
  }
  return "unknown";
}

inline HeadKind head_kind_from_string(std::string_view s) {
  if (s == "direct") return HeadKind::direct;
  if (s == "unconstrained_proxy") return HeadKind::unconstrained_proxy;
  if (s == "constrained_proxy") return HeadKind::constrained_proxy;
  if (s == "hybrid") return HeadKind::hybrid;
  throw ConfigError("unknown head variant '" + std::string(s) + "'");
}

struct HeadVariant {
  HeadKind kind = HeadKind::constrained_proxy;
  double alpha = 40.0;
  double beta = 1.1;
  double gamma = 1.0 / 512.0;

  static HeadVariant defaults(HeadKind kind) {
    switch (kind) {
      case HeadKind::direct: return {kind, 1.0 / 512.0, 1.0, 1.0 / 512.0};
      case HeadKind::unconstrained_proxy: return {kind, 40.0, 1.0, 1.0 / 512.0};
      case HeadKind::constrained_proxy: return {kind, 40.0, 1.1, 1.0 / 512.0};
      case HeadKind::hybrid: return {kind, 40.0, 1.1, 1.0 / 512.0};
    }
    throw ConfigError("unknown head variant");
  }

  bool has_proxy() const { return kind != HeadKind::direct; }
  bool constrained() const { return kind == HeadKind::constrained_proxy || kind == HeadKind::hybrid; }

  void validate() const {
    if (!(alpha > 0)) throw ConfigError("head: alpha must be positive");
    if (constrained() && !(beta >= 1)) throw ConfigError("head: beta must be >= 1 for constrained variants");
    if (kind == HeadKind::hybrid && !(gamma > 0)) throw ConfigError("head: gamma must be positive for hybrid");
  }
};

template <typename T>
struct ProxyTarget {
  Tensor<T> data;
};

template <typename T>
struct SyntheticGradient {
  Tensor<T> data;
};

namespace detail {

template <typename T>
T constrain_value(T sig, double beta, double mean, double std) {
  return static_cast<T>(beta) * ((sig - static_cast<T>(mean)) / static_cast<T>(std));
}

}  // namespace detail

/// Per-channel closed interval that every constrained proxy value lies in.
template <typename T>
struct ProxyBounds {
  std::array<T, 3> lo;
  std::array<T, 3> hi;
};

template <typename T>
ProxyBounds<T> proxy_bounds(double beta, const Normalization& norm = {}) {
  ProxyBounds<T> b;
  for (int c = 0; c < 3; ++c) {
    b.lo[c] = detail::constrain_value<T>(T(0), beta, norm.mean[c], norm.std[c]);
    b.hi[c] = detail::constrain_value<T>(T(1), beta, norm.mean[c], norm.std[c]);
  }
  return b;
}

/// P = beta * (sigmoid(raw) - mean) / std, channel-wise.
template <typename T>
ProxyTarget<T> constrain(const Tensor<T>& raw, double beta, const Normalization& norm = {}) {
  if (raw.c() != 3) throw DimensionError("constrain expects 3 channels, got " + raw.shape().str());
  ProxyTarget<T> p{Tensor<T>(raw.shape())};
  for (int b = 0; b < raw.n(); ++b)
    for (int c = 0; c < 3; ++c) {
      const T* src = raw.plane(b, c);
      T* dst = p.data.plane(b, c);
      for (std::size_t i = 0; i < raw.shape().plane(); ++i) {
        dst[i] = detail::constrain_value<T>(ops::sigmoid(src[i]), beta, norm.mean[c], norm.std[c]);
      }
    }
  return p;
}

/// alpha * d/dyhat MSE(yhat, sg[P]) = alpha * 2/(C*H*W) * (yhat - P).
template <typename T>
SyntheticGradient<T> grad_from_proxy(const Tensor<T>& pred, const ProxyTarget<T>& proxy, double alpha) {
  pred.require_same(proxy.data, "grad_from_proxy");
  const T k = static_cast<T>(alpha * 2.0 / static_cast<double>(pred.shape().per_image()));
  SyntheticGradient<T> g{Tensor<T>(pred.shape())};
  for (std::size_t i = 0; i < pred.size(); ++i) g.data[i] = k * (pred[i] - proxy.data[i]);
  return g;
}

template <typename T>
struct Synthesis {
  SyntheticGradient<T> gradient;
  std::optional<ProxyTarget<T>> proxy;
};

template <typename T>
Synthesis<T> synthesize(const Tensor<T>& pred, const Tensor<T>& backbone_output, const HeadVariant& v,
                        const Normalization& norm = {}) {
  pred.require_same(backbone_output, "synthesize");
  switch (v.kind) {
    case HeadKind::direct: {
      SyntheticGradient<T> g{backbone_output};
      g.data *= static_cast<T>(v.alpha);
      return {std::move(g), std::nullopt};
    }
    case HeadKind::unconstrained_proxy: {
      ProxyTarget<T> p{backbone_output};
      auto g = grad_from_proxy(pred, p, v.alpha);
      return {std::move(g), std::move(p)};
    }
    case HeadKind::constrained_proxy: {
      auto p = constrain(backbone_output, v.beta, norm);
      auto g = grad_from_proxy(pred, p, v.alpha);
      return {std::move(g), std::move(p)};
    }
    case HeadKind::hybrid: {
      Tensor<T> u = pred;
      u.axpy(static_cast<T>(-v.gamma), backbone_output);
      auto p = constrain(u, v.beta, norm);
      auto g = grad_from_proxy(pred, p, v.alpha);
      return {std::move(g), std::move(p)};
    }
  }
  throw ConfigError("unknown head variant");
}

/// Pulls loss gradients on the synthetic gradient and on the proxy back to
/// the backbone output. pred is an input here, not differentiated.
template <typename T>
Tensor<T> synthesize_backward(const Tensor<T>& pred, const Tensor<T>& backbone_output, const HeadVariant& v,
                              const Tensor<T>& d_gradient, const Tensor<T>* d_proxy, const Normalization& norm = {}) {
  pred.require_same(backbone_output, "synthesize_backward");
  pred.require_same(d_gradient, "synthesize_backward");
  if (v.kind == HeadKind::direct) {
    Tensor<T> d = d_gradient;
    d *= static_cast<T>(v.alpha);
    return d;
  }
  // dG/dP = -alpha * 2/(CHW)
  const T k = static_cast<T>(v.alpha * 2.0 / static_cast<double>(pred.shape().per_image()));
  Tensor<T> dp(pred.shape());
  for (std::size_t i = 0; i < dp.size(); ++i) dp[i] = -k * d_gradient[i];
  if (d_proxy) dp += *d_proxy;
  if (v.kind == HeadKind::unconstrained_proxy) return dp;

  const bool hybrid = v.kind == HeadKind::hybrid;
  Tensor<T> d(pred.shape());
  for (int b = 0; b < pred.n(); ++b)
    for (int c = 0; c < 3; ++c) {
      const T scale = static_cast<T>(v.beta / norm.std[c]);
      const T* raw = backbone_output.plane(b, c);
      const T* yh = pred.plane(b, c);
      const T* g = dp.plane(b, c);
      T* out = d.plane(b, c);
      for (std::size_t i = 0; i < pred.shape().plane(); ++i) {
        const T u = hybrid ? yh[i] - static_cast<T>(v.gamma) * raw[i] : raw[i];
        const T s = ops::sigmoid(u);
        const T du = g[i] * scale * s * (T(1) - s);
        out[i] = hybrid ? -static_cast<T>(v.gamma) * du : du;
      }
    }
  return d;
}

}  // namespace pgn
