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

// A small define-by-composition layer library. Each module caches what it
// needs during a training-mode forward and consumes it in backward();
// inference-mode forwards keep nothing alive.

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pgn/core/ops.hpp"
#include "pgn/core/tensor.hpp"

namespace pgn::nn {

enum class Mode { infer, train };

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, std::size_t count) : name(std::move(n)), value(Shape{1, 1, 1, static_cast<int>(count)}),
                                            grad(Shape{1, 1, 1, static_cast<int>(count)}) {}
  std::size_t size() const { return value.size(); }
};

/// Analytic cost of a forward pass, accumulated layer by layer.
struct Cost {
  std::uint64_t params = 0;
  std::uint64_t macs = 0;

  Cost& operator+=(const Cost& o) {
    params += o.params;
    macs += o.macs;
    return *this;
  }
};

template <typename T>
class Module {
 public:
  virtual ~Module() = default;

  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  /// Consumes the cache of the last training-mode forward. Parameter
  /// gradients accumulate; the input gradient is returned when requested.
  virtual Tensor<T> backward(const Tensor<T>& dy, bool want_dx) = 0;
  /// Shape inference plus analytic parameter/MAC accounting.
  virtual Shape cost(const Shape& in, Cost& acc) const = 0;

  virtual void collect_parameters(std::vector<Param<T>*>&) {}
  virtual void buffers(std::vector<std::pair<std::string, Tensor<T>*>>&) {}
  virtual void init(std::mt19937_64&) {}
  virtual void release() {}

  std::vector<Param<T>*> parameters() {
    std::vector<Param<T>*> out;
    collect_parameters(out);
    return out;
  }
  void zero_grad() {
    for (auto* p : parameters()) p->grad.zero();
  }
};

template <typename T>
using ModulePtr = std::unique_ptr<Module<T>>;

template <typename T>
class Conv2d final : public Module<T> {
 public:
  Conv2d(std::string name, ops::ConvGeometry g, bool bias)
      : name_(std::move(name)), g_(g), weight_(name_ + ".weight", g.weight_count()) {
    if (g.groups != 1 && !(g.groups == g.in_channels && g.groups == g.out_channels)) {
      throw ConfigError(name_ + ": only dense or depthwise convolutions are supported");
    }
    if (bias) bias_ = std::make_unique<Param<T>>(name_ + ".bias", static_cast<std::size_t>(g.out_channels));
  }

  const ops::ConvGeometry& geometry() const { return g_; }
  Param<T>& weight() { return weight_; }
  Param<T>* bias() { return bias_.get(); }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    Tensor<T> y = ops::conv2d_forward(x, weight_.value.data(), bias_ ? bias_->value.data() : nullptr, g_, name_);
    if (mode == Mode::train) input_ = x;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, bool want_dx) override {
    if (input_.empty()) throw std::logic_error(name_ + ": backward without a training forward");
    Tensor<T> dx = ops::conv2d_backward(input_, weight_.value.data(), dy, g_, weight_.grad.data(),
                                        bias_ ? bias_->grad.data() : nullptr, want_dx);
    input_ = Tensor<T>();
    return dx;
  }

  Shape cost(const Shape& in, Cost& acc) const override {
    const Shape out = ops::conv_output_shape(g_, in, name_);
    const std::uint64_t positions = static_cast<std::uint64_t>(out.h) * out.w;
    const std::uint64_t fan_in = static_cast<std::uint64_t>(g_.in_channels / g_.groups) * g_.kernel * g_.kernel;
    acc.params += g_.weight_count() + (bias_ ? g_.out_channels : 0);
    acc.macs += static_cast<std::uint64_t>(in.n) * positions * g_.out_channels * (fan_in + (bias_ ? 1 : 0));
    return out;
  }

  void collect_parameters(std::vector<Param<T>*>& out) override {
    out.push_back(&weight_);
    if (bias_) out.push_back(bias_.get());
  }

  // He-normal fan-in initialization, zero bias.
  void init(std::mt19937_64& rng) override {
    const double fan_in = static_cast<double>(g_.in_channels / g_.groups) * g_.kernel * g_.kernel;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in) * gain_);
    for (std::size_t i = 0; i < weight_.size(); ++i) weight_.value[i] = static_cast<T>(dist(rng));
    if (bias_) bias_->value.zero();
  }

  void set_init_gain(double gain) { gain_ = gain; }
  void release() override { input_ = Tensor<T>(); }

 private:
  std::string name_;
  ops::ConvGeometry g_;
  Param<T> weight_;
  std::unique_ptr<Param<T>> bias_;
  double gain_ = 1.0;
  Tensor<T> input_;
};

template <typename T>
class BatchNorm2d final : public Module<T> {
 public:
  BatchNorm2d(std::string name, int channels, T momentum = T(0.1), T eps = T(1e-5))
      : name_(std::move(name)),
        channels_(channels),
        momentum_(momentum),
        eps_(eps),
        gamma_(name_ + ".weight", static_cast<std::size_t>(channels)),
        beta_(name_ + ".bias", static_cast<std::size_t>(channels)),
        running_mean_(Shape{1, 1, 1, channels}),
        running_var_(Shape{1, 1, 1, channels}, T(1)) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    if (x.c() != channels_) throw DimensionError(name_ + ": channel mismatch " + x.shape().str());
    Tensor<T> y(x.shape());
    const std::size_t plane = x.shape().plane();
    const double count = static_cast<double>(x.n()) * plane;
    if (mode == Mode::train) {
      xhat_ = Tensor<T>(x.shape());
      inv_std_.assign(channels_, T(0));
    }
    for (int c = 0; c < channels_; ++c) {
      double mean;
      double var;
      if (mode == Mode::train) {
        double s = 0;
        for (int b = 0; b < x.n(); ++b) {
          const T* p = x.plane(b, c);
          for (std::size_t i = 0; i < plane; ++i) s += p[i];
        }
        mean = s / count;
        double v = 0;
        for (int b = 0; b < x.n(); ++b) {
          const T* p = x.plane(b, c);
          for (std::size_t i = 0; i < plane; ++i) v += (p[i] - mean) * (p[i] - mean);
        }
        var = v / count;
        const double unbiased = count > 1 ? v / (count - 1) : var;
        running_mean_[c] = static_cast<T>((1 - momentum_) * running_mean_[c] + momentum_ * mean);
        running_var_[c] = static_cast<T>((1 - momentum_) * running_var_[c] + momentum_ * unbiased);
      } else {
        mean = running_mean_[c];
        var = running_var_[c];
      }
      const T inv = static_cast<T>(1.0 / std::sqrt(var + eps_));
      const T g = gamma_.value[c];
      const T bt = beta_.value[c];
      for (int b = 0; b < x.n(); ++b) {
        const T* p = x.plane(b, c);
        T* q = y.plane(b, c);
        T* h = mode == Mode::train ? xhat_.plane(b, c) : nullptr;
        for (std::size_t i = 0; i < plane; ++i) {
          const T xh = (p[i] - static_cast<T>(mean)) * inv;
          if (h) h[i] = xh;
          q[i] = g * xh + bt;
        }
      }
      if (mode == Mode::train) inv_std_[c] = inv;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, bool want_dx) override {
    if (xhat_.empty()) throw std::logic_error(name_ + ": backward without a training forward");
    Tensor<T> dx;
    if (want_dx) dx = Tensor<T>(dy.shape());
    const std::size_t plane = dy.shape().plane();
    const double count = static_cast<double>(dy.n()) * plane;
    for (int c = 0; c < channels_; ++c) {
      double sum_dy = 0;
      double sum_dy_xh = 0;
      for (int b = 0; b < dy.n(); ++b) {
        const T* g = dy.plane(b, c);
        const T* h = xhat_.plane(b, c);
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy += g[i];
          sum_dy_xh += static_cast<double>(g[i]) * h[i];
        }
      }
      gamma_.grad[c] += static_cast<T>(sum_dy_xh);
      beta_.grad[c] += static_cast<T>(sum_dy);
      if (!want_dx) continue;
      const double k = static_cast<double>(gamma_.value[c]) * inv_std_[c] / count;
      for (int b = 0; b < dy.n(); ++b) {
        const T* g = dy.plane(b, c);
        const T* h = xhat_.plane(b, c);
        T* d = dx.plane(b, c);
        for (std::size_t i = 0; i < plane; ++i) {
          d[i] = static_cast<T>(k * (count * g[i] - sum_dy - h[i] * sum_dy_xh));
        }
      }
    }
    xhat_ = Tensor<T>();
    return dx;
  }

  Shape cost(const Shape& in, Cost& acc) const override {
    if (in.c != channels_) throw DimensionError(name_ + ": channel mismatch " + in.str());
    acc.params += 2 * static_cast<std::uint64_t>(channels_);
    return in;
  }

  void collect_parameters(std::vector<Param<T>*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }
  void buffers(std::vector<std::pair<std::string, Tensor<T>*>>& out) override {
    out.emplace_back(name_ + ".running_mean", &running_mean_);
    out.emplace_back(name_ + ".running_var", &running_var_);
  }
  void init(std::mt19937_64&) override {
    gamma_.value.fill(T(1));
    beta_.value.zero();
    running_mean_.zero();
    running_var_.fill(T(1));
  }
  void release() override { xhat_ = Tensor<T>(); }

 private:
  std::string name_;
  int channels_;
  T momentum_;
  T eps_;
  Param<T> gamma_;
  Param<T> beta_;
  Tensor<T> running_mean_;
  Tensor<T> running_var_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

enum class Activation { relu, leaky_relu, sigmoid };

template <typename T>
class Act final : public Module<T> {
 public:
  explicit Act(Activation kind, T slope = T(0.2)) : kind_(kind), slope_(kind == Activation::relu ? T(0) : slope) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    Tensor<T> y = x;
    if (kind_ == Activation::sigmoid) {
      ops::sigmoid_inplace(y);
    } else {
      ops::leaky_relu_inplace(y, slope_);
    }
    if (mode == Mode::train) output_ = y;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, bool) override {
    Tensor<T> dx = dy;
    if (kind_ == Activation::sigmoid) {
      ops::sigmoid_backward_inplace(output_, dx);
    } else {
      ops::leaky_relu_backward_inplace(output_, dx, slope_);
    }
    output_ = Tensor<T>();
    return dx;
  }

  Shape cost(const Shape& in, Cost&) const override { return in; }
  void release() override { output_ = Tensor<T>(); }

 private:
  Activation kind_;
  T slope_;
  Tensor<T> output_;
};

template <typename T>
class AvgPool2 final : public Module<T> {
 public:
  explicit AvgPool2(std::string name = "avgpool") : name_(std::move(name)) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    if (mode == Mode::train) in_shape_ = x.shape();
    return ops::avgpool2_forward(x, name_);
  }
  Tensor<T> backward(const Tensor<T>& dy, bool) override { return ops::avgpool2_backward(in_shape_, dy); }
  Shape cost(const Shape& in, Cost&) const override {
    if (in.h % 2 != 0 || in.w % 2 != 0) {
      throw DimensionError(name_ + ": spatial size " + std::to_string(in.h) + "x" + std::to_string(in.w) +
                           " is not divisible by 2");
    }
    return {in.n, in.c, in.h / 2, in.w / 2};
  }

 private:
  std::string name_;
  Shape in_shape_{};
};

/// Bilinear x2 upsampling (half-pixel centers).
template <typename T>
class Upsample2 final : public Module<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    if (mode == Mode::train) in_shape_ = x.shape();
    return ops::upsample_bilinear(x, 2 * x.h(), 2 * x.w());
  }
  Tensor<T> backward(const Tensor<T>& dy, bool) override { return ops::upsample_bilinear_backward(in_shape_, dy); }
  Shape cost(const Shape& in, Cost&) const override { return {in.n, in.c, 2 * in.h, 2 * in.w}; }

 private:
  Shape in_shape_{};
};

template <typename T>
class Sequential final : public Module<T> {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<ModulePtr<T>> layers) : layers_(std::move(layers)) {}

  Sequential& add(ModulePtr<T> m) {
    layers_.push_back(std::move(m));
    return *this;
  }
  template <typename M, typename... Args>
  M& emplace(Args&&... args) {
    auto m = std::make_unique<M>(std::forward<Args>(args)...);
    M& ref = *m;
    layers_.push_back(std::move(m));
    return ref;
  }

  std::size_t size() const { return layers_.size(); }
  Module<T>& operator[](std::size_t i) { return *layers_[i]; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    if (layers_.empty()) return x;
    Tensor<T> h = layers_.front()->forward(x, mode);
    for (std::size_t i = 1; i < layers_.size(); ++i) h = layers_[i]->forward(h, mode);
    return h;
  }

  Tensor<T> backward(const Tensor<T>& dy, bool want_dx) override {
    if (layers_.empty()) return want_dx ? dy : Tensor<T>();
    Tensor<T> g = dy;
    for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g, want_dx || i > 0);
    return g;
  }

  Shape cost(const Shape& in, Cost& acc) const override {
    Shape s = in;
    for (const auto& l : layers_) s = l->cost(s, acc);
    return s;
  }

  void collect_parameters(std::vector<Param<T>*>& out) override {
    for (auto& l : layers_) l->collect_parameters(out);
  }
  void buffers(std::vector<std::pair<std::string, Tensor<T>*>>& out) override {
    for (auto& l : layers_) l->buffers(out);
  }
  void init(std::mt19937_64& rng) override {
    for (auto& l : layers_) l->init(rng);
  }
  void release() override {
    for (auto& l : layers_) l->release();
  }

 private:
  std::vector<ModulePtr<T>> layers_;
};

/// y = post(body(x) + shortcut(x)); an empty shortcut is the identity.
template <typename T>
class Residual final : public Module<T> {
 public:
  Residual(ModulePtr<T> body, ModulePtr<T> shortcut, std::optional<Activation> post)
      : body_(std::move(body)), shortcut_(std::move(shortcut)) {
    if (post) post_ = std::make_unique<Act<T>>(*post);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    Tensor<T> y = body_->forward(x, mode);
    if (shortcut_) {
      y += shortcut_->forward(x, mode);
    } else {
      y += x;
    }
    return post_ ? post_->forward(y, mode) : y;
  }

  Tensor<T> backward(const Tensor<T>& dy, bool want_dx) override {
    Tensor<T> g = post_ ? post_->backward(dy, true) : dy;
    Tensor<T> dx = body_->backward(g, want_dx);
    if (shortcut_) {
      Tensor<T> ds = shortcut_->backward(g, want_dx);
      if (want_dx) dx += ds;
    } else if (want_dx) {
      dx += g;
    }
    return dx;
  }

  Shape cost(const Shape& in, Cost& acc) const override {
    const Shape out = body_->cost(in, acc);
    const Shape skip = shortcut_ ? shortcut_->cost(in, acc) : in;
    if (!(out == skip)) throw DimensionError("residual: branch shapes " + out.str() + " vs " + skip.str());
    return out;
  }

  void collect_parameters(std::vector<Param<T>*>& out) override {
    body_->collect_parameters(out);
    if (shortcut_) shortcut_->collect_parameters(out);
  }
  void buffers(std::vector<std::pair<std::string, Tensor<T>*>>& out) override {
    body_->buffers(out);
    if (shortcut_) shortcut_->buffers(out);
  }
  void init(std::mt19937_64& rng) override {
    body_->init(rng);
    if (shortcut_) shortcut_->init(rng);
  }
  void release() override {
    body_->release();
    if (shortcut_) shortcut_->release();
    if (post_) post_->release();
  }

 private:
  ModulePtr<T> body_;
  ModulePtr<T> shortcut_;
  std::unique_ptr<Act<T>> post_;
};

template <typename T>
std::uint64_t parameter_count(Module<T>& m) {
  std::uint64_t n = 0;
  for (auto* p : m.parameters()) n += p->size();
  return n;
}

}  // namespace pgn::nn
