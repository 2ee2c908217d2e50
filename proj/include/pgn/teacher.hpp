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

// The perceptual-loss teacher: a VGG-style stack of 3x3 convolutions with
// rectifiers and 2x2 average pooling. The loss is the (optionally
// per-tap averaged) L1 distance between post-rectifier activations of the
// two images; its exact input gradient is what a PGN learns to emit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pgn/core/normalization.hpp"
#include "pgn/core/ops.hpp"
#include "pgn/core/tensor.hpp"
#include "pgn/io/bundle.hpp"
#include "pgn/nn/module.hpp"

namespace pgn {

enum class WeightsSource { full_vgg19_pretrained, tiny_seeded };

/// How the L1 distance of one tap is reduced over its elements.
enum class TapReduction {
  sum,   // sum over C*H*W of the tap
  mean,  // sum divided by C*H*W of the tap
};

struct TeacherSpec {
  std::vector<int> conv_channels;  // output channels per 3x3 conv, in order
  std::vector<int> pool_after;     // conv indices followed by a 2x2 average pool
  std::vector<int> taps;           // conv indices whose rectified output enters the loss
  Normalization normalization;
  WeightsSource weights_source = WeightsSource::tiny_seeded;
  TapReduction reduction = TapReduction::mean;
  std::uint64_t seed = 1234;
  std::filesystem::path weights_path;  // full mode only; empty -> seeded weights

  /// Eight convs (16-16-32-32-64-64-128-128), pools after the 2nd, 4th and
  /// 6th, every rectifier tapped.
  static TeacherSpec tiny(std::uint64_t seed = 1234) {
    TeacherSpec s;
    s.conv_channels = {16, 16, 32, 32, 64, 64, 128, 128};
    s.pool_after = {1, 3, 5};
    s.taps = {0, 1, 2, 3, 4, 5, 6, 7};
    s.weights_source = WeightsSource::tiny_seeded;
    s.seed = seed;
    return s;
  }

  /// VGG-19 through conv5_1 with every max pool replaced by an average pool.
  static TeacherSpec vgg19(std::filesystem::path weights = {}) {
    TeacherSpec s;
    s.conv_channels = {64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512, 512};
    s.pool_after = {1, 3, 7, 11};
    s.taps = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
    s.weights_source = WeightsSource::full_vgg19_pretrained;
    s.weights_path = std::move(weights);
    return s;
  }

  int num_pools() const { return static_cast<int>(pool_after.size()); }
  bool pools_after(int layer) const { return std::find(pool_after.begin(), pool_after.end(), layer) != pool_after.end(); }
  bool tapped(int layer) const { return std::find(taps.begin(), taps.end(), layer) != taps.end(); }

  void validate() const {
    if (conv_channels.empty()) throw ConfigError("teacher: empty conv plan");
    const int n = static_cast<int>(conv_channels.size());
    for (int c : conv_channels)
      if (c <= 0) throw ConfigError("teacher: conv channels must be positive");
    for (int p : pool_after)
      if (p < 0 || p >= n) throw ConfigError("teacher: pool index " + std::to_string(p) + " out of range");
    if (taps.empty()) throw ConfigError("teacher: no tap layers");
    for (std::size_t i = 0; i < taps.size(); ++i) {
      if (taps[i] < 0 || taps[i] >= n) throw ConfigError("teacher: tap index " + std::to_string(taps[i]) + " out of range");
      if (i > 0 && taps[i] <= taps[i - 1]) throw ConfigError("teacher: tap indices must be strictly increasing");
    }
  }
};

/// Structural description of one teacher stage, used for graph assertions.
struct TeacherLayerInfo {
  enum class Kind { conv3x3, relu, avgpool } kind;
  int index;  // conv index the stage belongs to
};

template <typename T>
class Teacher {
 public:
  explicit Teacher(TeacherSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    int in = 3;
    for (std::size_t i = 0; i < spec_.conv_channels.size(); ++i) {
      ops::ConvGeometry g{in, spec_.conv_channels[i], 3, 1, 1, 1};
      geometry_.push_back(g);
      weights_.emplace_back(g.weight_count(), T(0));
      biases_.emplace_back(static_cast<std::size_t>(g.out_channels), T(0));
      in = g.out_channels;
    }
    if (!spec_.weights_path.empty()) {
      load_weights(spec_.weights_path);
    } else {
      seed_weights();
    }
  }

  const TeacherSpec& spec() const { return spec_; }
  std::size_t num_convs() const { return geometry_.size(); }

  /// Stage list in execution order; contains no max pooling by construction.
  std::vector<TeacherLayerInfo> graph() const {
    std::vector<TeacherLayerInfo> out;
    for (int i = 0; i < static_cast<int>(geometry_.size()); ++i) {
      out.push_back({TeacherLayerInfo::Kind::conv3x3, i});
      out.push_back({TeacherLayerInfo::Kind::relu, i});
      if (spec_.pools_after(i)) out.push_back({TeacherLayerInfo::Kind::avgpool, i});
    }
    return out;
  }

  std::span<const T> weight(std::size_t i) const { return weights_.at(i); }
  std::span<const T> bias(std::size_t i) const { return biases_.at(i); }

  /// Analytic parameter and MAC count for a forward pass over `in`.
  nn::Cost cost(const Shape& in) const {
    nn::Cost acc;
    Shape s = in;
    for (std::size_t i = 0; i < geometry_.size(); ++i) {
      const Shape o = ops::conv_output_shape(geometry_[i], s, layer_name(i));
      acc.params += geometry_[i].weight_count() + static_cast<std::uint64_t>(geometry_[i].out_channels);
      acc.macs += static_cast<std::uint64_t>(o.n) * o.h * o.w * o.c * (static_cast<std::uint64_t>(s.c) * 9 + 1);
      s = o;
      if (last_needed_layer() == i) break;
      if (spec_.pools_after(static_cast<int>(i))) {
        if (s.h % 2 || s.w % 2) throw DimensionError(pool_name(i) + ": spatial size not divisible by 2");
        s.h /= 2;
        s.w /= 2;
      }
    }
    return acc;
  }

  /// Rectified activations at every tap layer, in tap order.
  std::vector<Tensor<T>> features(const Tensor<T>& x) const {
    check_input(x);
    std::vector<Tensor<T>> taps;
    Tensor<T> h = x;
    for (std::size_t i = 0; i <= last_needed_layer(); ++i) {
      Tensor<T> a = ops::conv2d_forward(h, weights_[i].data(), biases_[i].data(), geometry_[i], layer_name(i));
      ops::leaky_relu_inplace(a, T(0));
      if (spec_.tapped(static_cast<int>(i))) taps.push_back(a);
      if (i == last_needed_layer()) break;
      h = spec_.pools_after(static_cast<int>(i)) ? ops::avgpool2_forward(a, pool_name(i)) : std::move(a);
    }
    return taps;
  }

  /// PL per batch element.
  std::vector<double> perceptual_loss(const Tensor<T>& pred, const Tensor<T>& target) const {
    pred.require_same(target, "perceptual_loss");
    return loss_from_features(features(pred), features(target));
  }

  std::vector<double> loss_from_features(const std::vector<Tensor<T>>& fp, const std::vector<Tensor<T>>& ft) const {
    std::vector<double> loss(fp.empty() ? 0 : fp.front().n(), 0.0);
    for (std::size_t k = 0; k < fp.size(); ++k) {
      fp[k].require_same(ft[k], "perceptual_loss tap");
      const double scale = tap_scale(fp[k].shape());
      for (int b = 0; b < fp[k].n(); ++b) {
        const T* p = fp[k].image(b);
        const T* q = ft[k].image(b);
        double acc = 0;
        for (std::size_t i = 0; i < fp[k].shape().per_image(); ++i) acc += std::abs(static_cast<double>(p[i]) - q[i]);
        loss[b] += scale * acc;
      }
    }
    return loss;
  }

  struct LossAndGrad {
    std::vector<double> loss;  // per image
    Tensor<T> grad;            // d loss_b / d pred_b for every image b
  };

  /// One forward/backward pass; target features may be precomputed.
  LossAndGrad loss_and_grad(const Tensor<T>& pred, const std::vector<Tensor<T>>& target_features,
                            T loss_scale = T(1)) const {
    check_input(pred);
    const std::size_t last = last_needed_layer();
    std::vector<Tensor<T>> conv_in;  // input to each conv
    std::vector<Tensor<T>> acts;     // rectified output of each conv
    conv_in.reserve(last + 1);
    acts.reserve(last + 1);
    Tensor<T> h = pred;
    for (std::size_t i = 0; i <= last; ++i) {
      Tensor<T> a = ops::conv2d_forward(h, weights_[i].data(), biases_[i].data(), geometry_[i], layer_name(i));
      ops::leaky_relu_inplace(a, T(0));
      conv_in.push_back(std::move(h));
      if (i < last) h = spec_.pools_after(static_cast<int>(i)) ? ops::avgpool2_forward(a, pool_name(i)) : a;
      acts.push_back(std::move(a));
    }

    LossAndGrad out;
    // Per-tap sums, added up in tap order afterwards so the value is
    // bit-identical to loss_from_features.
    std::vector<std::vector<double>> tap_loss(target_features.size(), std::vector<double>(pred.n(), 0.0));
    Tensor<T> dh;  // gradient w.r.t. the output of stage i (after optional pool)
    std::size_t tap_k = target_features.size();
    for (std::size_t i = last + 1; i-- > 0;) {
      Tensor<T> da = dh.empty() ? Tensor<T>(acts[i].shape())
                     : spec_.pools_after(static_cast<int>(i)) ? ops::avgpool2_backward(acts[i].shape(), dh)
                                                              : std::move(dh);
      if (spec_.tapped(static_cast<int>(i))) {
        --tap_k;
        const Tensor<T>& ft = target_features.at(tap_k);
        acts[i].require_same(ft, "perceptual_grad tap");
        const double scale = tap_scale(acts[i].shape());
        const T s = static_cast<T>(scale) * loss_scale;
        for (int b = 0; b < pred.n(); ++b) {
          const T* p = acts[i].image(b);
          const T* q = ft.image(b);
          T* d = da.image(b);
          double acc = 0;
          for (std::size_t e = 0; e < acts[i].shape().per_image(); ++e) {
            const T diff = p[e] - q[e];
            acc += std::abs(static_cast<double>(diff));
            // sign(0) = 0
            if (diff > T(0)) {
              d[e] += s;
            } else if (diff < T(0)) {
              d[e] -= s;
            }
          }
          tap_loss[tap_k][b] = scale * acc;
        }
      }
      ops::leaky_relu_backward_inplace(acts[i], da, T(0));
      dh = ops::conv2d_backward(conv_in[i], weights_[i].data(), da, geometry_[i], static_cast<T*>(nullptr),
                                static_cast<T*>(nullptr), true);
      acts[i] = Tensor<T>();
      conv_in[i] = Tensor<T>();
    }
    out.loss.assign(pred.n(), 0.0);
    for (const auto& per_tap : tap_loss)
      for (int b = 0; b < pred.n(); ++b) out.loss[b] += per_tap[b];
    for (double& l : out.loss) l *= static_cast<double>(loss_scale);
    out.grad = std::move(dh);
    return out;
  }

  LossAndGrad loss_and_grad(const Tensor<T>& pred, const Tensor<T>& target, T loss_scale = T(1)) const {
    pred.require_same(target, "perceptual_grad");
    return loss_and_grad(pred, features(target), loss_scale);
  }

  /// Exact reverse-mode gradient of each image's PL with respect to pred.
  Tensor<T> perceptual_grad(const Tensor<T>& pred, const Tensor<T>& target) const {
    return loss_and_grad(pred, target).grad;
  }

  /// Serializes weights in layer order.
  io::Bundle to_bundle() const {
    io::Bundle b;
    b.meta["kind"] = "teacher";
    b.meta["conv_channels"] = spec_.conv_channels;
    for (std::size_t i = 0; i < geometry_.size(); ++i) {
      const auto& g = geometry_[i];
      b.tensors.push_back(io::make_record<T>(layer_name(i) + ".weight", {g.out_channels, g.in_channels, 3, 3}, weights_[i]));
      b.tensors.push_back(io::make_record<T>(layer_name(i) + ".bias", {g.out_channels}, biases_[i]));
    }
    return b;
  }

 private:
  static std::string layer_name(std::size_t i) { return "conv" + std::to_string(i); }
  static std::string pool_name(std::size_t i) { return "avgpool_after_conv" + std::to_string(i); }

  std::size_t last_needed_layer() const { return static_cast<std::size_t>(spec_.taps.back()); }

  double tap_scale(const Shape& s) const {
    return spec_.reduction == TapReduction::mean ? 1.0 / static_cast<double>(s.per_image()) : 1.0;
  }

  void check_input(const Tensor<T>& x) const {
    if (x.c() != 3) throw DimensionError("teacher input must have 3 channels, got " + x.shape().str());
    int h = x.h();
    int w = x.w();
    for (std::size_t i = 0; i < last_needed_layer(); ++i) {
      if (spec_.pools_after(static_cast<int>(i))) {
        if (h % 2 || w % 2) {
          throw DimensionError(pool_name(i) + ": spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                               " is not divisible by 2");
        }
        h /= 2;
        w /= 2;
      }
    }
  }

  void seed_weights() {
    std::mt19937_64 rng(spec_.seed);
    for (std::size_t i = 0; i < geometry_.size(); ++i) {
      const double fan_in = static_cast<double>(geometry_[i].in_channels) * 9.0;
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (auto& v : weights_[i]) v = static_cast<T>(dist(rng));
      std::fill(biases_[i].begin(), biases_[i].end(), T(0));
    }
  }

  void load_weights(const std::filesystem::path& dir) {
    const io::Bundle b = io::load_bundle(dir);
    for (std::size_t i = 0; i < geometry_.size(); ++i) {
      const auto* w = b.find(layer_name(i) + ".weight");
      const auto* bs = b.find(layer_name(i) + ".bias");
      if (!w || !bs) throw io::BundleError("teacher weights missing " + layer_name(i) + " in " + dir.string());
      io::copy_record<T>(*w, weights_[i]);
      io::copy_record<T>(*bs, biases_[i]);
    }
  }

  TeacherSpec spec_;
  std::vector<ops::ConvGeometry> geometry_;
  std::vector<std::vector<T>> weights_;
  std::vector<std::vector<T>> biases_;
};

}  // namespace pgn
