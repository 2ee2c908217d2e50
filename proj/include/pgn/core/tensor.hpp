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
#include <array>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pgn {

/// Raised when tensor shapes are incompatible with an operation.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for invalid specs, variants or run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Process-wide accounting of bytes held by tensor storage. Used by the
// perf module to observe peak memory without an external profiler.
class MemoryTracker {
 public:
  static MemoryTracker& instance() {
    static MemoryTracker tracker;
    return tracker;
  }

  void on_alloc(std::size_t bytes) noexcept {
    const std::size_t now = current_.fetch_add(bytes) + bytes;
    std::size_t peak = peak_.load();
    while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
    }
  }
  void on_free(std::size_t bytes) noexcept { current_.fetch_sub(bytes); }

  std::size_t current() const noexcept { return current_.load(); }
  std::size_t peak() const noexcept { return peak_.load(); }
  void reset_peak() noexcept { peak_.store(current_.load()); }

 private:
  std::atomic<std::size_t> current_{0};
  std::atomic<std::size_t> peak_{0};
};

template <typename T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <typename U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    if (n > std::numeric_limits<std::size_t>::max() / sizeof(T)) throw std::bad_array_new_length();
    auto* p = static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{64}));
    MemoryTracker::instance().on_alloc(n * sizeof(T));
    return p;
  }
  void deallocate(T* p, std::size_t n) noexcept {
    MemoryTracker::instance().on_free(n * sizeof(T));
    ::operator delete(p, std::align_val_t{64});
  }

  template <typename U>
  bool operator==(const TrackingAllocator<U>&) const noexcept {
    return true;
  }
};

/// NCHW shape of a 4-d activation tensor.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const noexcept {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
           static_cast<std::size_t>(w);
  }
  std::size_t per_image() const noexcept {
    return static_cast<std::size_t>(c) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }

  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
    return os.str();
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Storage = std::vector<T, TrackingAllocator<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
      throw DimensionError("negative tensor extent " + shape.str());
    }
  }
  Tensor(int n, int c, int h, int w, T fill = T(0)) : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const noexcept { return shape_; }
  int n() const noexcept { return shape_.n; }
  int c() const noexcept { return shape_.c; }
  int h() const noexcept { return shape_.h; }
  int w() const noexcept { return shape_.w; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return {data_.data(), data_.size()}; }
  std::span<const T> span() const noexcept { return {data_.data(), data_.size()}; }

  T* image(int b) noexcept { return data_.data() + static_cast<std::size_t>(b) * shape_.per_image(); }
  const T* image(int b) const noexcept { return data_.data() + static_cast<std::size_t>(b) * shape_.per_image(); }
  T* plane(int b, int ch) noexcept { return image(b) + static_cast<std::size_t>(ch) * shape_.plane(); }
  const T* plane(int b, int ch) const noexcept { return image(b) + static_cast<std::size_t>(ch) * shape_.plane(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }
  T& at(int b, int ch, int y, int x) noexcept {
    return data_[((static_cast<std::size_t>(b) * shape_.c + ch) * shape_.h + y) * shape_.w + x];
  }
  const T& at(int b, int ch, int y, int x) const noexcept {
    return data_[((static_cast<std::size_t>(b) * shape_.c + ch) * shape_.h + y) * shape_.w + x];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T(0)); }

  /// Reinterprets the storage with a new shape of identical element count.
  Tensor& reshape(Shape s) {
    if (s.numel() != data_.size()) throw DimensionError("reshape " + shape_.str() + " -> " + s.str());
    shape_ = s;
    return *this;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  Tensor& operator+=(const Tensor& o) {
    require_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    require_same(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  /// y += a * x
  void axpy(T a, const Tensor& x) {
    require_same(x, "axpy");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += a * x.data_[i];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  void require_same(const Tensor& o, const char* what) const {
    if (!(shape_ == o.shape_)) {
      throw DimensionError(std::string(what) + ": shape mismatch " + shape_.str() + " vs " + o.shape_.str());
    }
  }

 private:
  Shape shape_{};
  Storage data_;
};

template <typename T>
Tensor<T> operator+(Tensor<T> a, const Tensor<T>& b) {
  a += b;
  return a;
}
template <typename T>
Tensor<T> operator-(Tensor<T> a, const Tensor<T>& b) {
  a -= b;
  return a;
}
template <typename T>
Tensor<T> operator*(Tensor<T> a, T s) {
  a *= s;
  return a;
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  // Accumulate in double for float tensors; the cosine metric relies on it.
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return static_cast<T>(acc);
}

template <typename T>
double squared_norm(std::span<const T> a) {
  double acc = 0;
  for (T v : a) acc += static_cast<double>(v) * static_cast<double>(v);
  return acc;
}

template <typename T>
double max_abs(const Tensor<T>& t) {
  double m = 0;
  for (std::size_t i = 0; i < t.size(); ++i) m = std::max(m, std::abs(static_cast<double>(t[i])));
  return m;
}

/// Concatenates along the batch axis.
template <typename T>
Tensor<T> concat_batch(std::span<const Tensor<T>> parts) {
  if (parts.empty()) return {};
  Shape s = parts.front().shape();
  int total = 0;
  for (const auto& p : parts) {
    if (p.c() != s.c || p.h() != s.h || p.w() != s.w) throw DimensionError("concat_batch: mismatched images");
    total += p.n();
  }
  s.n = total;
  Tensor<T> out(s);
  T* dst = out.data();
  for (const auto& p : parts) dst = std::copy(p.data(), p.data() + p.size(), dst);
  return out;
}

/// Copies images [begin, begin + count) out of a batch.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& t, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > t.n()) throw DimensionError("slice_batch out of range");
  Tensor<T> out(Shape{count, t.c(), t.h(), t.w()});
  std::copy(t.image(begin), t.image(begin) + out.size(), out.data());
  return out;
}

/// Concatenates two batches along the channel axis.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw DimensionError("concat_channels: " + a.shape().str() + " vs " + b.shape().str());
  }
  Tensor<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
  for (int i = 0; i < a.n(); ++i) {
    T* dst = std::copy(a.image(i), a.image(i) + a.shape().per_image(), out.image(i));
    std::copy(b.image(i), b.image(i) + b.shape().per_image(), dst);
  }
  return out;
}

/// Splits channels [0, c_first) and [c_first, C) into two tensors.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, int c_first) {
  if (c_first < 0 || c_first > t.c()) throw DimensionError("split_channels out of range");
  Tensor<T> a(t.n(), c_first, t.h(), t.w());
  Tensor<T> b(t.n(), t.c() - c_first, t.h(), t.w());
  for (int i = 0; i < t.n(); ++i) {
    const T* src = t.image(i);
    std::copy(src, src + a.shape().per_image(), a.image(i));
    std::copy(src + a.shape().per_image(), src + t.shape().per_image(), b.image(i));
  }
  return {std::move(a), std::move(b)};
}

}  // namespace pgn
