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

// Analytic parameter / multiply-accumulate counting and wall-time / peak
// memory measurement. One MAC is one multiply-accumulate; bias additions
// count one MAC per output element; pooling, activations and upsampling
// are free.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "pgn/model.hpp"
#include "pgn/teacher.hpp"

namespace pgn {

struct CostReport {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t macs_forward = 0;
  std::uint64_t macs_gradient = 0;  // cost of producing one image-space gradient
  bool measured = false;            // false: counts only
  double wall_time = 0;             // median seconds
  std::size_t peak_memory = 0;      // bytes above the pre-run baseline
};

/// Analytic count from the layer walk; `in` only needs to be a valid input.
template <typename T>
std::uint64_t count_params(const nn::Module<T>& m, const Shape& in = {1, 6, 64, 64}) {
  nn::Cost c;
  m.cost(in, c);
  return c.params;
}

template <typename T>
std::uint64_t count_params(const Teacher<T>& t) {
  return t.cost({1, 3, 64, 64}).params;
}

template <typename T>
std::uint64_t count_macs(const nn::Module<T>& m, const Shape& in) {
  if (in.n <= 0) throw DimensionError("count_macs: batch must be positive");
  nn::Cost c;
  m.cost(in, c);
  return c.macs;
}

template <typename T>
std::uint64_t count_macs(const Teacher<T>& t, const Shape& in) {
  if (in.n <= 0) throw DimensionError("count_macs: batch must be positive");
  return t.cost(in).macs;
}

/// Teacher row: the forward cost is both images of the pair; a gradient
/// costs three of those (two forward passes and one backward pass).
template <typename T>
CostReport teacher_cost_report(const Teacher<T>& t, const Shape& image, const std::string& name = "teacher") {
  CostReport r;
  r.name = name;
  r.params = count_params(t);
  r.macs_forward = 2 * count_macs(t, image);
  r.macs_gradient = 3 * r.macs_forward;
  return r;
}

/// PGN row: one forward pass over the 6-channel pair yields the gradient.
template <typename T>
CostReport backbone_cost_report(const nn::Module<T>& backbone, const Shape& image, const std::string& name) {
  CostReport r;
  r.name = name;
  r.params = count_params(backbone, {1, 6, image.h, image.w});
  r.macs_forward = count_macs(backbone, {image.n, 6, image.h, image.w});
  r.macs_gradient = r.macs_forward;
  return r;
}

struct Measurement {
  double median_seconds = 0;
  std::size_t peak_bytes = 0;
};

/// Runs `fn` once as warm-up, then `repeats` timed times. Peak memory is
/// the tracked allocation high-water mark above the level at entry.
inline Measurement measure(const std::function<void()>& fn, int repeats) {
  if (repeats < 5) throw ConfigError("measure: at least 5 repeats are required");
  auto& tracker = MemoryTracker::instance();
  fn();
  std::vector<double> times;
  const std::size_t base = tracker.current();
  tracker.reset_peak();
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t mid = times.size() / 2;
  const double median = times.size() % 2 ? times[mid] : 0.5 * (times[mid - 1] + times[mid]);
  return {median, tracker.peak() - base};
}

/// Times the teacher's forward-backward gradient for a batch of pairs.
template <typename T>
Measurement measure_teacher_gradient(const Teacher<T>& t, const Shape& image, int repeats) {
  if (image.n <= 0) throw DimensionError("measure: batch must be positive");
  const Tensor<T> pred(image, T(0.1));
  const Tensor<T> target(image, T(-0.1));
  return measure([&] { (void)t.perceptual_grad(pred, target); }, repeats);
}

/// Times one inference pass of a PGN backbone on a batch of pairs.
template <typename T>
Measurement measure_backbone_forward(nn::Module<T>& backbone, const Shape& image, int repeats) {
  if (image.n <= 0) throw DimensionError("measure: batch must be positive");
  const Tensor<T> pair(Shape{image.n, 6, image.h, image.w}, T(0.1));
  return measure([&] { (void)backbone.forward(pair, nn::Mode::infer); }, repeats);
}

inline std::string cost_header() { return "name,params,macs_forward,macs_gradient,measured,wall_time_s,peak_memory_bytes"; }

inline std::string format_cost_row(const CostReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%llu,%llu,%llu,%d,%.6g,%zu", r.name.c_str(),
                static_cast<unsigned long long>(r.params), static_cast<unsigned long long>(r.macs_forward),
                static_cast<unsigned long long>(r.macs_gradient), r.measured ? 1 : 0, r.wall_time, r.peak_memory);
  return buf;
}

/// Human-readable table: millions of parameters, billions of MACs.
inline std::string format_cost_table(const std::vector<CostReport>& rows) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-14s %10s %12s %12s %12s %12s\n", "model", "params", "MACs fwd", "MACs grad",
                "time [s]", "memory [MB]");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-14s %9.2fM %11.2fB %11.2fB", r.name.c_str(), r.params / 1e6,
                  r.macs_forward / 1e9, r.macs_gradient / 1e9);
    out += buf;
    if (r.measured) {
      std::snprintf(buf, sizeof buf, " %12.4f %12.1f\n", r.wall_time, r.peak_memory / 1048576.0);
    } else {
      std::snprintf(buf, sizeof buf, " %12s %12s\n", "-", "-");
    }
    out += buf;
  }
  return out;
}

}  // namespace pgn
