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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pgn/core/tensor.hpp"

namespace pgn {

/// SplitMix64-style mixing of a base seed with stream identifiers.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1) + 0xBF58476D1CE4E5B9ULL * (c + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline void log_warning(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }
inline void log_info(const std::string& msg) { std::cerr << msg << '\n'; }

/// Cosine between two flattened fields; empty when either has zero norm.
template <typename T>
std::optional<double> cosine_similarity(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw DimensionError("cosine_similarity: size mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    ab += x * y;
    aa += x * x;
    bb += y * y;
  }
  if (aa == 0 || bb == 0) return std::nullopt;
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

/// Per-image cosine similarity over a batch.
template <typename T>
std::vector<std::optional<double>> cosine_similarity(const Tensor<T>& syn, const Tensor<T>& real) {
  syn.require_same(real, "cosine_similarity");
  std::vector<std::optional<double>> out;
  const std::size_t per = syn.shape().per_image();
  for (int b = 0; b < syn.n(); ++b) out.push_back(cosine_similarity<T>({syn.image(b), per}, {real.image(b), per}));
  return out;
}

struct MeanStd {
  double mean = std::nan("");
  double std = std::nan("");
  std::size_t count = 0;
};

/// Mean and population standard deviation of the present values.
inline MeanStd mean_std(const std::vector<std::optional<double>>& v) {
  MeanStd r;
  double s = 0, ss = 0;
  for (const auto& x : v)
    if (x) {
      s += *x;
      ss += *x * *x;
      ++r.count;
    }
  if (r.count == 0) return r;
  r.mean = s / static_cast<double>(r.count);
  r.std = std::sqrt(std::max(0.0, ss / static_cast<double>(r.count) - r.mean * r.mean));
  return r;
}

}  // namespace pgn
