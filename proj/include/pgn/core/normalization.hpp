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

#include <array>

#include "pgn/core/tensor.hpp"

namespace pgn {

/// Per-channel affine map between raw [0,1] pixels and the teacher's
/// input space: normalized = (raw - mean) / std.
struct Normalization {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.229, 0.224, 0.225};

  template <typename T>
  Tensor<T> normalize(const Tensor<T>& raw) const {
    check(raw);
    Tensor<T> out(raw.shape());
    for (int b = 0; b < raw.n(); ++b)
      for (int c = 0; c < 3; ++c) {
        const T m = static_cast<T>(mean[c]);
        const T s = static_cast<T>(std[c]);
        const T* src = raw.plane(b, c);
        T* dst = out.plane(b, c);
        for (std::size_t i = 0; i < raw.shape().plane(); ++i) dst[i] = (src[i] - m) / s;
      }
    return out;
  }

  template <typename T>
  Tensor<T> denormalize(const Tensor<T>& x) const {
    check(x);
    Tensor<T> out(x.shape());
    for (int b = 0; b < x.n(); ++b)
      for (int c = 0; c < 3; ++c) {
        const T m = static_cast<T>(mean[c]);
        const T s = static_cast<T>(std[c]);
        const T* src = x.plane(b, c);
        T* dst = out.plane(b, c);
        for (std::size_t i = 0; i < x.shape().plane(); ++i) dst[i] = src[i] * s + m;
      }
    return out;
  }

 private:
  template <typename T>
  static void check(const Tensor<T>& t) {
    if (t.c() != 3) throw DimensionError("normalization expects 3 channels, got " + t.shape().str());
  }
};

}  // namespace pgn
