// Copyright 2026 The ckdn-iqa Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ckdn/error.hpp"

namespace ckdn {

/// Dense channel-major (C, H, W) array. Images and feature maps both use
/// this type; a 1-D vector is a tensor of shape (n, 1, 1).
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(std::size_t channels, std::size_t height, std::size_t width, T fill = T(0))
      : c_(channels), h_(height), w_(width), data_(channels * height * width, fill) {}

  std::size_t channels() const { return c_; }
  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t size() const { return data_.size(); }
  std::size_t plane() const { return h_ * w_; }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t c, std::size_t y, std::size_t x) { return data_[(c * h_ + y) * w_ + x]; }
  const T& operator()(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * h_ + y) * w_ + x];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::span<T> channel(std::size_t c) { return std::span<T>(data_).subspan(c * plane(), plane()); }
  std::span<const T> channel(std::size_t c) const {
    return std::span<const T>(data_).subspan(c * plane(), plane());
  }

  bool same_shape(const Tensor& o) const { return c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }

  std::string shape_string() const {
    return "(" + std::to_string(c_) + ", " + std::to_string(h_) + ", " + std::to_string(w_) + ")";
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  Tensor& operator+=(const Tensor& o) {
    check_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    check_same(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, T s) { return a *= s; }
  friend Tensor operator*(T s, Tensor a) { return a *= s; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(c_, h_, w_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  void check_same(const Tensor& o, const char* op) const {
    if (!same_shape(o)) {
      throw ShapeError(std::string("tensor ") + op + ": shape " + shape_string() + " vs " +
                       o.shape_string());
    }
  }

  std::size_t c_ = 0, h_ = 0, w_ = 0;
  std::vector<T> data_;
};

/// Mean of squared elementwise differences.
template <class T>
T mean_squared_difference(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.same_shape(b), "mean_squared_difference: shape " + a.shape_string() + " vs " +
                                       b.shape_string());
  detail::require(!a.empty(), "mean_squared_difference: empty tensor");
  T acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<T>(a.size());
}

}  // namespace ckdn
