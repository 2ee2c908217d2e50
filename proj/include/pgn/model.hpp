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

// A perceptual gradient network: backbone over the channel-concatenated
// pair (pred, target) followed by a synthesis head, plus checkpoint I/O.

#include <cstdint>
#include <filesystem>
#include <string>

#include "pgn/heads.hpp"
#include "pgn/io/bundle.hpp"
#include "pgn/networks.hpp"

namespace pgn {

inline nlohmann::json to_json(const BackboneSpec& s) {
  return {{"family", to_string(s.family)},
          {"fidelity", to_string(s.fidelity)},
          {"num_blocks", s.num_blocks},
          {"num_scales", s.num_scales},
          {"base_channels", s.base_channels}};
}

inline BackboneSpec backbone_spec_from_json(const nlohmann::json& j) {
  BackboneSpec s;
  s.family = backbone_family_from_string(j.at("family").get<std::string>());
  s.fidelity = fidelity_from_string(j.at("fidelity").get<std::string>());
  s.num_blocks = j.at("num_blocks").get<int>();
  s.num_scales = j.at("num_scales").get<int>();
  s.base_channels = j.at("base_channels").get<int>();
  return s;
}

inline nlohmann::json to_json(const HeadVariant& v) {
  return {{"kind", to_string(v.kind)}, {"alpha", v.alpha}, {"beta", v.beta}, {"gamma", v.gamma}};
}

inline HeadVariant head_variant_from_json(const nlohmann::json& j) {
  HeadVariant v;
  v.kind = head_kind_from_string(j.at("kind").get<std::string>());
  v.alpha = j.at("alpha").get<double>();
  v.beta = j.at("beta").get<double>();
  v.gamma = j.at("gamma").get<double>();
  v.validate();
  return v;
}

/// Parameters and buffers of a module, in traversal order.
template <typename T>
void append_state(nn::Module<T>& m, io::Bundle& b) {
  for (auto* p : m.parameters())
    b.tensors.push_back(io::make_record<T>(p->name, {static_cast<std::int64_t>(p->size())}, p->value.span()));
  std::vector<std::pair<std::string, Tensor<T>*>> bufs;
  m.buffers(bufs);
  for (auto& [name, t] : bufs)
    b.tensors.push_back(io::make_record<T>(name, {static_cast<std::int64_t>(t->size())}, t->span()));
}

template <typename T>
void restore_state(nn::Module<T>& m, const io::Bundle& b, const std::string& origin) {
  auto load = [&](const std::string& name, std::span<T> dst) {
    const auto* rec = b.find(name);
    if (!rec) throw io::BundleError("checkpoint " + origin + " lacks tensor " + name);
    io::copy_record<T>(*rec, dst);
  };
  for (auto* p : m.parameters()) load(p->name, p->value.span());
  std::vector<std::pair<std::string, Tensor<T>*>> bufs;
  m.buffers(bufs);
  for (auto& [name, t] : bufs) load(name, t->span());
}

template <typename T>
class PerceptualGradientNetwork {
 public:
  struct Output {
    Tensor<T> backbone_output;
    Synthesis<T> synthesis;
  };

  PerceptualGradientNetwork(BackboneSpec spec, HeadVariant head, std::uint64_t seed, Normalization norm = {})
      : spec_(spec), head_(head), seed_(seed), norm_(norm), backbone_(build_backbone<T>(spec, seed)) {
    head_.validate();
  }

  const BackboneSpec& spec() const { return spec_; }
  const HeadVariant& head() const { return head_; }
  std::uint64_t seed() const { return seed_; }
  const Normalization& normalization() const { return norm_; }
  nn::Module<T>& backbone() { return *backbone_; }

  /// In training mode the backbone keeps its activations for backward().
  Output forward(const Tensor<T>& pred, const Tensor<T>& target, nn::Mode mode = nn::Mode::infer) {
    pred.require_same(target, "pgn input pair");
    Tensor<T> raw = backbone_->forward(concat_channels(pred, target), mode);
    Synthesis<T> s = synthesize(pred, raw, head_, norm_);
    return {std::move(raw), std::move(s)};
  }

  /// Accumulates backbone parameter gradients from loss gradients on the
  /// synthetic gradient and (for proxy heads) on the proxy.
  void backward(const Tensor<T>& pred, const Output& out, const Tensor<T>& d_gradient, const Tensor<T>* d_proxy) {
    const Tensor<T> d_raw = synthesize_backward(pred, out.backbone_output, head_, d_gradient, d_proxy, norm_);
    backbone_->backward(d_raw, false);
  }

  io::Bundle to_bundle(std::uint64_t step) {
    io::Bundle b;
    b.meta = {{"kind", "pgn"}, {"backbone", to_json(spec_)}, {"head", to_json(head_)}, {"seed", seed_}, {"step", step}};
    append_state(*backbone_, b);
    return b;
  }

  void save(const std::filesystem::path& dir, std::uint64_t step) { io::save_bundle(dir, to_bundle(step)); }

  static PerceptualGradientNetwork load(const std::filesystem::path& dir) {
    const io::Bundle b = io::load_bundle(dir);
    if (b.meta.value("kind", "") != "pgn") throw io::BundleError(dir.string() + " is not a PGN checkpoint");
    PerceptualGradientNetwork net(backbone_spec_from_json(b.meta.at("backbone")),
                                  head_variant_from_json(b.meta.at("head")), b.meta.at("seed").get<std::uint64_t>());
    restore_state(*net.backbone_, b, dir.string());
    return net;
  }

 private:
  BackboneSpec spec_;
  HeadVariant head_;
  std::uint64_t seed_;
  Normalization norm_;
  nn::ModulePtr<T> backbone_;
};

}  // namespace pgn
