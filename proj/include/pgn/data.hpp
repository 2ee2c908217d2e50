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

// Image set loading and the training-time augmentation: random square
// crop, bilinear resize, horizontal flip, teacher normalization.

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pgn/core/normalization.hpp"
#include "pgn/core/ops.hpp"
#include "pgn/io/image.hpp"
#include "pgn/metrics.hpp"

namespace pgn {

struct AugmentConfig {
  int image_size = 64;  // output side
  int crop_min = 64;    // smallest crop side; the largest is the image's short side
  double flip_probability = 0.5;
};

/// Raw [0,1] images kept in memory.
struct ImageSet {
  std::vector<Tensor<float>> images;
  std::vector<std::string> names;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
};

/// Loads every PNG in `dir`; images whose short side is below `min_side`
/// are skipped with a warning.
inline ImageSet load_image_set(const std::filesystem::path& dir, int min_side) {
  ImageSet set;
  for (const auto& path : io::list_pngs(dir)) {
    Tensor<float> img = io::read_png(path);
    if (std::min(img.h(), img.w()) < min_side) {
      log_warning("skipping " + path.string() + ": " + std::to_string(img.w()) + "x" + std::to_string(img.h()) +
                  " is smaller than the " + std::to_string(min_side) + " px crop");
      continue;
    }
    set.images.push_back(std::move(img));
    set.names.push_back(path.filename().string());
  }
  return set;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& img, int y0, int x0, int h, int w) {
  if (y0 < 0 || x0 < 0 || y0 + h > img.h() || x0 + w > img.w()) throw DimensionError("crop out of bounds");
  Tensor<T> out(img.n(), img.c(), h, w);
  for (int b = 0; b < img.n(); ++b)
    for (int c = 0; c < img.c(); ++c)
      for (int y = 0; y < h; ++y)
        std::copy_n(img.plane(b, c) + static_cast<std::size_t>(y0 + y) * img.w() + x0, w,
                    out.plane(b, c) + static_cast<std::size_t>(y) * w);
  return out;
}

template <typename T>
void flip_horizontal(Tensor<T>& img) {
  for (int b = 0; b < img.n(); ++b)
    for (int c = 0; c < img.c(); ++c)
      for (int y = 0; y < img.h(); ++y) {
        T* row = img.plane(b, c) + static_cast<std::size_t>(y) * img.w();
        std::reverse(row, row + img.w());
      }
}

/// One augmented, normalized sample of shape (1, 3, size, size).
template <typename T>
Tensor<T> augment(const Tensor<float>& raw, const AugmentConfig& cfg, std::mt19937_64& rng,
                  const Normalization& norm = {}) {
  const int short_side = std::min(raw.h(), raw.w());
  if (short_side < cfg.crop_min) throw DimensionError("augment: image smaller than crop_min");
  const int side = std::uniform_int_distribution<int>(cfg.crop_min, short_side)(rng);
  const int y0 = std::uniform_int_distribution<int>(0, raw.h() - side)(rng);
  const int x0 = std::uniform_int_distribution<int>(0, raw.w() - side)(rng);
  const bool flip = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.flip_probability;
  Tensor<float> patch = crop(raw, y0, x0, side, side);
  if (side != cfg.image_size) patch = ops::upsample_bilinear(patch, cfg.image_size, cfg.image_size);
  if (flip) flip_horizontal(patch);
  return norm.normalize(patch.cast<T>());
}

/// Full-image normalized tensor (no augmentation).
template <typename T>
Tensor<T> to_normalized(const Tensor<float>& raw, const Normalization& norm = {}) {
  return norm.normalize(raw.cast<T>());
}

}  // namespace pgn
