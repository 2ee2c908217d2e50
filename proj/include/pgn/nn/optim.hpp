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

#include <cmath>
#include <vector>

#include "pgn/nn/module.hpp"

namespace pgn::nn {

struct AdamSettings {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed parameter list. Moments live in the optimizer; the
/// parameters are owned by the network.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Param<T>*> params, AdamSettings s) : params_(std::move(params)), s_(s) { reset(); }

  /// Clears moments and the step counter, e.g. after parameters were
  /// re-initialized.
  void reset() {
    m_.clear();
    v_.clear();
    for (auto* p : params_) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
    t_ = 0;
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
    const double step = s_.lr * std::sqrt(bc2) / bc1;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Param<T>& p = *params_[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = p.grad[i];
        m[i] = s_.beta1 * m[i] + (1.0 - s_.beta1) * g;
        v[i] = s_.beta2 * v[i] + (1.0 - s_.beta2) * g * g;
        p.value[i] = static_cast<T>(p.value[i] - step * m[i] / (std::sqrt(v[i]) + s_.eps * std::sqrt(bc2)));
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->grad.zero();
  }

  long steps() const { return t_; }
  const AdamSettings& settings() const { return s_; }

 private:
  std::vector<Param<T>*> params_;
  AdamSettings s_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long t_ = 0;
};

}  // namespace pgn::nn
