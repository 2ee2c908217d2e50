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

// Backbones (ResNet-N and UNet, 6 -> 3 channels), skip-free autoencoder
// surrogates (3 -> 3 channels) and the Deep-Image-Prior style generator.
//
// Two fidelity levels exist. "exact" presets follow the published
// architecture figure (batch norm, 7x7 stem, Double BlazeBlocks with
// separable convolutions) and are used for size/cost accounting. "desk"
// presets keep the topology with narrower layers for CPU-scale training.

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "pgn/nn/module.hpp"

namespace pgn {

enum class BackboneFamily { resnet, unet };
enum class Fidelity { desk, exact };

inline std::string_view to_string(BackboneFamily f) { return f == BackboneFamily::resnet ? "resnet" : "unet"; }
inline std::string_view to_string(Fidelity f) { return f == Fidelity::desk ? "desk" : "exact"; }

inline BackboneFamily backbone_family_from_string(std::string_view s) {
  if (s == "resnet") return BackboneFamily::resnet;
  if (s == "unet") return BackboneFamily::unet;
  throw ConfigError("unknown backbone family '" + std::string(s) + "'");
}
inline Fidelity fidelity_from_string(std::string_view s) {
  if (s == "desk") return Fidelity::desk;
  if (s == "exact") return Fidelity::exact;
  throw ConfigError("unknown preset fidelity '" + std::string(s) + "'");
}

struct BackboneSpec {
  BackboneFamily family = BackboneFamily::resnet;
  Fidelity fidelity = Fidelity::desk;
  int num_blocks = 4;     // resnet
  int num_scales = 5;     // unet
  int base_channels = 16;
  static constexpr int input_channels = 6;
  static constexpr int output_channels = 3;

  static BackboneSpec resnet_exact(int blocks) { return {BackboneFamily::resnet, Fidelity::exact, blocks, 5, 64}; }
  static BackboneSpec unet_exact() { return {BackboneFamily::unet, Fidelity::exact, 4, 5, 64}; }
  static BackboneSpec resnet_desk(int blocks, int base = 16) {
    return {BackboneFamily::resnet, Fidelity::desk, blocks, 5, base};
  }
  static BackboneSpec unet_desk(int base = 16) { return {BackboneFamily::unet, Fidelity::desk, 4, 5, base}; }

  bool batch_norm() const { return fidelity == Fidelity::exact; }
  /// Spatial extents must be divisible by this.
  int spatial_multiple() const { return family == BackboneFamily::resnet ? 2 : (1 << num_scales); }

  std::string label() const {
    return family == BackboneFamily::resnet ? "ResNet-" + std::to_string(num_blocks) : std::string("UNet");
  }

  void validate() const {
    if (family == BackboneFamily::resnet && num_blocks != 4 && num_blocks != 6 && num_blocks != 8) {
      throw ConfigError("resnet backbone supports 4, 6 or 8 residual blocks, got " + std::to_string(num_blocks));
    }
    if (family == BackboneFamily::unet && num_scales != 5) {
      throw ConfigError("unet backbone uses 5 scales, got " + std::to_string(num_scales));
    }
    if (base_channels <= 0) throw ConfigError("backbone base_channels must be positive");
  }
};

struct AutoencoderSpec {
  int depth = 1;  // 1, 2 or 3 downscaling blocks
  int base_channels = 16;
  Fidelity fidelity = Fidelity::desk;

  static AutoencoderSpec exact(int depth) { return {depth, 128, Fidelity::exact}; }
  static AutoencoderSpec desk(int depth, int base = 16) { return {depth, base, Fidelity::desk}; }

  int spatial_multiple() const { return 1 << depth; }

  void validate() const {
    if (depth < 1 || depth > 3) throw ConfigError("autoencoder depth must be 1, 2 or 3, got " + std::to_string(depth));
    if (base_channels <= 1) throw ConfigError("autoencoder base_channels must be > 1");
  }
};

struct GeneratorSpec {
  int noise_channels = 64;
  int noise_size = 4;
  int stages = 4;  // each doubles the spatial size
  int channels = 32;

  int output_size() const { return noise_size << stages; }
};

namespace blocks {

template <typename T>
using Seq = nn::Sequential<T>;

inline ops::ConvGeometry conv(int in, int out, int k, int stride = 1) { return {in, out, k, stride, k / 2, 1}; }
inline ops::ConvGeometry depthwise(int ch, int k, int stride = 1) { return {ch, ch, k, stride, k / 2, ch}; }

/// Conv -> [BN] -> activation; the conv carries a bias only without BN.
template <typename T>
void conv_unit(Seq<T>& s, const std::string& name, ops::ConvGeometry g, bool bn, nn::Activation act) {
  s.template emplace<nn::Conv2d<T>>(name + ".conv", g, !bn);
  if (bn) s.template emplace<nn::BatchNorm2d<T>>(name + ".bn", g.out_channels);
  s.template emplace<nn::Act<T>>(act);
}

/// Separable 3x3 convolution followed by ReLU.
template <typename T>
void separable_unit(Seq<T>& s, const std::string& name, int in, int out) {
  s.template emplace<nn::Conv2d<T>>(name + ".dw", depthwise(in, 3), false);
  s.template emplace<nn::Conv2d<T>>(name + ".pw", conv(in, out, 1), true);
  s.template emplace<nn::Act<T>>(nn::Activation::relu);
}

/// Two depthwise-5x5 + pointwise stages on the residual branch; the
/// shortcut is a strided 1x1 projection whenever the shape changes.
template <typename T>
nn::ModulePtr<T> double_blaze_block(const std::string& name, int in, int out, int stride, bool bn) {
  auto body = std::make_unique<Seq<T>>();
  body->template emplace<nn::Conv2d<T>>(name + ".dw1", depthwise(in, 5, stride), false);
  body->template emplace<nn::Conv2d<T>>(name + ".pw1", conv(in, out, 1), !bn);
  if (bn) body->template emplace<nn::BatchNorm2d<T>>(name + ".bn1", out);
  body->template emplace<nn::Act<T>>(nn::Activation::relu);
  body->template emplace<nn::Conv2d<T>>(name + ".dw2", depthwise(out, 5), false);
  body->template emplace<nn::Conv2d<T>>(name + ".pw2", conv(out, out, 1), !bn);
  if (bn) body->template emplace<nn::BatchNorm2d<T>>(name + ".bn2", out);
  nn::ModulePtr<T> shortcut;
  if (stride != 1 || in != out) {
    auto proj = std::make_unique<Seq<T>>();
    proj->template emplace<nn::Conv2d<T>>(name + ".proj", conv(in, out, 1, stride), !bn);
    if (bn) proj->template emplace<nn::BatchNorm2d<T>>(name + ".proj_bn", out);
    shortcut = std::move(proj);
  }
  return std::make_unique<nn::Residual<T>>(std::move(body), std::move(shortcut), nn::Activation::relu);
}

}  // namespace blocks

/// Stem, one strided downscale, N residual blocks at twice the base width,
/// bilinear upscale and a 3-channel projection.
template <typename T>
nn::ModulePtr<T> build_resnet(const BackboneSpec& spec) {
  using namespace blocks;
  const bool bn = spec.batch_norm();
  const int c0 = spec.base_channels;
  const int c1 = 2 * c0;
  const int stem_k = spec.fidelity == Fidelity::exact ? 7 : 3;
  const auto lrelu = nn::Activation::leaky_relu;
  auto net = std::make_unique<Seq<T>>();
  conv_unit<T>(*net, "stem", conv(BackboneSpec::input_channels, c0, stem_k), bn, lrelu);
  conv_unit<T>(*net, "down", conv(c0, c1, 3, 2), bn, lrelu);
  for (int b = 0; b < spec.num_blocks; ++b) {
    const std::string name = "block" + std::to_string(b);
    auto body = std::make_unique<Seq<T>>();
    conv_unit<T>(*body, name + ".a", conv(c1, c1, 3), bn, lrelu);
    body->template emplace<nn::Conv2d<T>>(name + ".b.conv", conv(c1, c1, 3), !bn);
    if (bn) body->template emplace<nn::BatchNorm2d<T>>(name + ".b.bn", c1);
    net->add(std::make_unique<nn::Residual<T>>(std::move(body), nullptr, std::nullopt));
  }
  net->template emplace<nn::Upsample2<T>>();
  conv_unit<T>(*net, "up", conv(c1, c0, 3), bn, lrelu);
  net->template emplace<nn::Conv2d<T>>("head", conv(c0, BackboneSpec::output_channels, 3), true);
  return net;
}

/// Encoder of Double BlazeBlock stages, each halving the resolution, and a
/// decoder that upsamples, concatenates the matching skip and applies a
/// separable convolution.
template <typename T>
class UNet final : public nn::Module<T> {
 public:
  struct Widths {
    std::vector<int> encoder;         // output channels per scale
    std::vector<int> blocks;          // Double BlazeBlocks per scale
    std::vector<int> decoder;         // output channels per upscale, bottom first
  };

  static Widths widths_for(const BackboneSpec& spec) {
    const int b = spec.base_channels;
    return {{b, b, 2 * b, 4 * b, 8 * b}, {1, 2, 2, 2, 2}, {4 * b, 2 * b, b, b / 2, b / 4}};
  }

  UNet(const BackboneSpec& spec, int in_channels, int out_channels) {
    const Widths w = widths_for(spec);
    const bool bn = spec.batch_norm();
    int prev = in_channels;
    skip_channels_.push_back(in_channels);
    for (std::size_t s = 0; s < w.encoder.size(); ++s) {
      auto stage = std::make_unique<nn::Sequential<T>>();
      for (int k = 0; k < w.blocks[s]; ++k) {
        const std::string name = "enc" + std::to_string(s) + "." + std::to_string(k);
        stage->add(blocks::double_blaze_block<T>(name, prev, w.encoder[s], k == 0 ? 2 : 1, bn));
        prev = w.encoder[s];
      }
      encoder_.push_back(std::move(stage));
      if (s + 1 < w.encoder.size()) skip_channels_.push_back(prev);
    }
    for (std::size_t d = 0; d < w.decoder.size(); ++d) {
      const int skip = skip_channels_[skip_channels_.size() - 1 - d];
      auto stage = std::make_unique<nn::Sequential<T>>();
      blocks::separable_unit<T>(*stage, "dec" + std::to_string(d), prev + skip, w.decoder[d]);
      decoder_.push_back(std::move(stage));
      prev = w.decoder[d];
    }
    head_ = std::make_unique<nn::Conv2d<T>>("head", blocks::conv(prev, out_channels, 1), true);
  }

  Tensor<T> forward(const Tensor<T>& x, nn::Mode mode) override {
    const int m = 1 << static_cast<int>(encoder_.size());
    if (x.h() % m || x.w() % m) {
      throw DimensionError("unet: spatial size " + std::to_string(x.h()) + "x" + std::to_string(x.w()) +
                           " is not divisible by " + std::to_string(m));
    }
    std::vector<Tensor<T>> skips{x};
    Tensor<T> h = encoder_[0]->forward(x, mode);
    for (std::size_t s = 1; s < encoder_.size(); ++s) {
      skips.push_back(h);
      h = encoder_[s]->forward(h, mode);
    }
    if (mode == nn::Mode::train) concat_split_.clear();
    for (std::size_t d = 0; d < decoder_.size(); ++d) {
      Tensor<T> up = ops::upsample_bilinear(h, 2 * h.h(), 2 * h.w());
      const Tensor<T>& skip = skips[skips.size() - 1 - d];
      if (mode == nn::Mode::train) concat_split_.push_back({h.shape(), up.c()});
      h = decoder_[d]->forward(concat_channels(up, skip), mode);
    }
    return head_->forward(h, mode);
  }

  Tensor<T> backward(const Tensor<T>& dy, bool want_dx) override {
    Tensor<T> g = head_->backward(dy, true);
    std::vector<Tensor<T>> skip_grads(encoder_.size());
    for (std::size_t d = decoder_.size(); d-- > 0;) {
      Tensor<T> dcat = decoder_[d]->backward(g, true);
      auto [dup, dskip] = split_channels(dcat, concat_split_[d].second);
      skip_grads[encoder_.size() - 1 - d] = std::move(dskip);
      g = ops::upsample_bilinear_backward(concat_split_[d].first, dup);
    }
    for (std::size_t s = encoder_.size(); s-- > 1;) {
      g = encoder_[s]->backward(g, true);
      g += skip_grads[s];
    }
    Tensor<T> dx = encoder_[0]->backward(g, want_dx);
    if (want_dx) dx += skip_grads[0];
    return dx;
  }

  Shape cost(const Shape& in, nn::Cost& acc) const override {
    std::vector<Shape> skips{in};
    Shape s = encoder_[0]->cost(in, acc);
    for (std::size_t k = 1; k < encoder_.size(); ++k) {
      skips.push_back(s);
      s = encoder_[k]->cost(s, acc);
    }
    for (std::size_t d = 0; d < decoder_.size(); ++d) {
      const Shape& skip = skips[skips.size() - 1 - d];
      s = decoder_[d]->cost({s.n, s.c + skip.c, 2 * s.h, 2 * s.w}, acc);
    }
    return head_->cost(s, acc);
  }

  void collect_parameters(std::vector<nn::Param<T>*>& out) override {
    for (auto& e : encoder_) e->collect_parameters(out);
    for (auto& d : decoder_) d->collect_parameters(out);
    head_->collect_parameters(out);
  }
  void buffers(std::vector<std::pair<std::string, Tensor<T>*>>& out) override {
    for (auto& e : encoder_) e->buffers(out);
    for (auto& d : decoder_) d->buffers(out);
  }
  void init(std::mt19937_64& rng) override {
    for (auto& e : encoder_) e->init(rng);
    for (auto& d : decoder_) d->init(rng);
    head_->init(rng);
  }
  void release() override {
    for (auto& e : encoder_) e->release();
    for (auto& d : decoder_) d->release();
    head_->release();
    concat_split_.clear();
  }

 private:
  std::vector<std::unique_ptr<nn::Sequential<T>>> encoder_;
  std::vector<std::unique_ptr<nn::Sequential<T>>> decoder_;
  std::unique_ptr<nn::Conv2d<T>> head_;
  std::vector<int> skip_channels_;
  std::vector<std::pair<Shape, int>> concat_split_;  // pre-upsample shape, upsampled channels
};

template <typename T>
nn::ModulePtr<T> build_backbone(const BackboneSpec& spec, std::uint64_t seed) {
  spec.validate();
  nn::ModulePtr<T> net;
  if (spec.family == BackboneFamily::resnet) {
    net = build_resnet<T>(spec);
  } else {
    net = std::make_unique<UNet<T>>(spec, BackboneSpec::input_channels, BackboneSpec::output_channels);
  }
  std::mt19937_64 rng(seed);
  net->init(rng);
  return net;
}

/// UNet-derived encoder/decoder without skip connections.
template <typename T>
nn::ModulePtr<T> build_autoencoder(const AutoencoderSpec& spec, std::uint64_t seed) {
  spec.validate();
  using namespace blocks;
  const int c1 = spec.base_channels;
  const std::vector<int> enc{c1, c1, 2 * c1};
  auto net = std::make_unique<Seq<T>>();
  int prev = 3;
  for (int d = 0; d < spec.depth; ++d) {
    net->add(double_blaze_block<T>("enc" + std::to_string(d), prev, enc[d], 2, true));
    prev = enc[d];
  }
  for (int d = spec.depth; d-- > 0;) {
    const int out = d == 0 ? c1 / 2 : enc[d - 1];
    net->template emplace<nn::Upsample2<T>>();
    separable_unit<T>(*net, "dec" + std::to_string(d), prev, out);
    prev = out;
  }
  net->template emplace<nn::Conv2d<T>>("head", conv(prev, 3, 1), true);
  std::mt19937_64 rng(seed);
  net->init(rng);
  return net;
}

/// Decoder from a fixed noise tensor to a [0,1] image: each stage is
/// bilinear x2, 3x3 conv, batch norm and leaky ReLU.
template <typename T>
nn::ModulePtr<T> build_generator(const GeneratorSpec& spec, std::uint64_t seed) {
  using namespace blocks;
  if (spec.stages <= 0 || spec.channels <= 0 || spec.noise_channels <= 0) throw ConfigError("invalid generator spec");
  auto net = std::make_unique<Seq<T>>();
  int prev = spec.noise_channels;
  for (int s = 0; s < spec.stages; ++s) {
    net->template emplace<nn::Upsample2<T>>();
    conv_unit<T>(*net, "stage" + std::to_string(s), conv(prev, spec.channels, 3), true, nn::Activation::leaky_relu);
    prev = spec.channels;
  }
  net->template emplace<nn::Conv2d<T>>("head", conv(prev, 3, 1), true);
  net->template emplace<nn::Act<T>>(nn::Activation::sigmoid);
  std::mt19937_64 rng(seed);
  net->init(rng);
  return net;
}

}  // namespace pgn
