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

// Differentiable building blocks with hand-written backward passes. Every
// layer reads its weights from a flat parameter span at fixed offsets and
// accumulates (+=) into a gradient span of identical layout.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ckdn/error.hpp"
#include "ckdn/tensor.hpp"

namespace ckdn {

enum class Activation { relu, silu };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "silu"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "silu") return Activation::silu;
  throw ConfigError("unknown activation '" + s + "' (expected relu|silu)");
}

template <class T>
T activate(Activation a, T x) {
  if (a == Activation::relu) return x > T(0) ? x : T(0);
  return x / (T(1) + std::exp(-x));
}

/// Derivative of the activation evaluated at pre-activation value x.
template <class T>
T activate_grad(Activation a, T x) {
  if (a == Activation::relu) return x > T(0) ? T(1) : T(0);
  const T s = T(1) / (T(1) + std::exp(-x));
  return s * (T(1) + x * (T(1) - s));
}

template <class T>
Tensor<T> activate(Activation a, const Tensor<T>& x) {
  Tensor<T> y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = activate(a, y[i]);
  return y;
}

/// dx = dy * act'(x), in place on dy.
template <class T>
void activate_backward(Activation a, const Tensor<T>& x, Tensor<T>& dy) {
  for (std::size_t i = 0; i < dy.size(); ++i) dy[i] *= activate_grad(a, x[i]);
}

template <class T>
using MatrixX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <class T>
struct ConvCache {
  MatrixX<T> cols;  // (out_h * out_w) x (cin * k * k)
  std::size_t in_h = 0, in_w = 0;
};

/// 2-D convolution with zero padding. Weights are stored (cout, cin, k, k)
/// followed elsewhere by a (cout) bias.
struct Conv2d {
  std::size_t cin = 0, cout = 0, kernel = 3, stride = 1, pad = 1;
  std::size_t weight_offset = 0, bias_offset = 0;

  std::size_t weight_count() const { return cout * cin * kernel * kernel; }
  std::size_t fan_in() const { return cin * kernel * kernel; }
  std::size_t out_size(std::size_t n) const { return (n + 2 * pad - kernel) / stride + 1; }

  /// Output columns [first, last) whose tap `k` lands inside an input row
  /// of width `in`.
  std::pair<std::size_t, std::size_t> valid_range(std::size_t k, std::size_t out, std::size_t in) const {
    std::size_t first = 0;
    while (first < out && first * stride + k < pad) ++first;
    std::size_t last = out;
    while (last > first && (last - 1) * stride + k >= in + pad) --last;
    return {first, last};
  }

  template <class T>
  Tensor<T> forward(std::span<const T> params, const Tensor<T>& x, ConvCache<T>& cache) const {
    if (x.channels() != cin) {
      throw ShapeError("conv: expected " + std::to_string(cin) + " input channels, got " +
                       x.shape_string());
    }
    if (x.height() + 2 * pad < kernel || x.width() + 2 * pad < kernel) {
      throw ShapeError("conv: input " + x.shape_string() + " smaller than kernel");
    }
    const std::size_t oh = out_size(x.height()), ow = out_size(x.width());
    const std::size_t k2 = kernel * kernel;
    cache.in_h = x.height();
    cache.in_w = x.width();
    cache.cols.resize(static_cast<Eigen::Index>(oh * ow), static_cast<Eigen::Index>(cin * k2));
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t ky = 0; ky < kernel; ++ky) {
        for (std::size_t kx = 0; kx < kernel; ++kx) {
          T* col = cache.cols.col(static_cast<Eigen::Index>(ci * k2 + ky * kernel + kx)).data();
          const auto [x0, x1] = valid_range(kx, ow, x.width());
          for (std::size_t oy = 0; oy < oh; ++oy) {
            T* dst = col + oy * ow;
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(x.height())) {
              std::fill(dst, dst + ow, T(0));
              continue;
            }
            std::fill(dst, dst + x0, T(0));
            std::fill(dst + x1, dst + ow, T(0));
            const T* row = &x(ci, static_cast<std::size_t>(iy), 0);
            if (stride == 1) {
              std::copy(row + (x0 + kx - pad), row + (x1 + kx - pad), dst + x0);
            } else {
              for (std::size_t ox = x0; ox < x1; ++ox) dst[ox] = row[ox * stride + kx - pad];
            }
          }
        }
      }
    }
    Tensor<T> y(cout, oh, ow);
    Eigen::Map<const MatrixX<T>> w(params.data() + weight_offset, static_cast<Eigen::Index>(cin * k2),
                                   static_cast<Eigen::Index>(cout));
    Eigen::Map<MatrixX<T>> out(y.data(), static_cast<Eigen::Index>(oh * ow), static_cast<Eigen::Index>(cout));
    out.noalias() = cache.cols * w;
    for (std::size_t co = 0; co < cout; ++co) {
      out.col(static_cast<Eigen::Index>(co)).array() += params[bias_offset + co];
    }
    return y;
  }

  /// Accumulates weight/bias gradients; returns dL/dx when `need_input_grad`.
  template <class T>
  Tensor<T> backward(std::span<const T> params, const ConvCache<T>& cache, const Tensor<T>& dy,
                     std::span<T> grads, bool need_input_grad = true) const {
    const std::size_t oh = dy.height(), ow = dy.width();
    const std::size_t k2 = kernel * kernel;
    Eigen::Map<const MatrixX<T>> dout(dy.data(), static_cast<Eigen::Index>(oh * ow),
                                      static_cast<Eigen::Index>(cout));
    Eigen::Map<MatrixX<T>> dw(grads.data() + weight_offset, static_cast<Eigen::Index>(cin * k2),
                              static_cast<Eigen::Index>(cout));
    dw.noalias() += cache.cols.transpose() * dout;
    // Plain loop: Eigen's vectorized sum peels to an aligned address, so its
    // rounding would depend on where the buffer happens to live.
    for (std::size_t co = 0; co < cout; ++co) {
      const T* d = dy.data() + co * oh * ow;
      T s = 0;
      for (std::size_t i = 0; i < oh * ow; ++i) s += d[i];
      grads[bias_offset + co] += s;
    }
    if (!need_input_grad) return {};

    Eigen::Map<const MatrixX<T>> w(params.data() + weight_offset, static_cast<Eigen::Index>(cin * k2),
                                   static_cast<Eigen::Index>(cout));
    const MatrixX<T> dcols = dout * w.transpose();
    Tensor<T> dx(cin, cache.in_h, cache.in_w);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t ky = 0; ky < kernel; ++ky) {
        for (std::size_t kx = 0; kx < kernel; ++kx) {
          const T* col = dcols.col(static_cast<Eigen::Index>(ci * k2 + ky * kernel + kx)).data();
          const auto [x0, x1] = valid_range(kx, ow, cache.in_w);
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(cache.in_h)) continue;
            T* row = &dx(ci, static_cast<std::size_t>(iy), 0);
            const T* src = col + oy * ow;
            for (std::size_t ox = x0; ox < x1; ++ox) row[ox * stride + kx - pad] += src[ox];
          }
        }
      }
    }
    return dx;
  }
};

/// Non-overlapping average pooling by an integer factor.
template <class T>
Tensor<T> avg_pool(const Tensor<T>& x, std::size_t factor) {
  if (factor == 1) return x;
  if (x.height() % factor != 0 || x.width() % factor != 0) {
    throw ShapeError("avg_pool: " + x.shape_string() + " not divisible by " + std::to_string(factor));
  }
  const std::size_t oh = x.height() / factor, ow = x.width() / factor;
  const T norm = T(1) / static_cast<T>(factor * factor);
  Tensor<T> y(x.channels(), oh, ow);
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t yy = 0; yy < x.height(); ++yy)
      for (std::size_t xx = 0; xx < x.width(); ++xx) y(c, yy / factor, xx / factor) += x(c, yy, xx) * norm;
  return y;
}

template <class T>
Tensor<T> avg_pool_backward(const Tensor<T>& dy, std::size_t factor) {
  if (factor == 1) return dy;
  const T norm = T(1) / static_cast<T>(factor * factor);
  Tensor<T> dx(dy.channels(), dy.height() * factor, dy.width() * factor);
  for (std::size_t c = 0; c < dx.channels(); ++c)
    for (std::size_t yy = 0; yy < dx.height(); ++yy)
      for (std::size_t xx = 0; xx < dx.width(); ++xx) dx(c, yy, xx) = dy(c, yy / factor, xx / factor) * norm;
  return dx;
}

/// (C, H, W) -> (C, 1, 1) spatial mean.
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  Tensor<T> y(x.channels(), 1, 1);
  const T norm = T(1) / static_cast<T>(x.plane());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    T acc = 0;
    for (T v : x.channel(c)) acc += v;
    y[c] = acc * norm;
  }
  return y;
}

template <class T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& dy, std::size_t h, std::size_t w) {
  Tensor<T> dx(dy.channels(), h, w);
  const T norm = T(1) / static_cast<T>(h * w);
  for (std::size_t c = 0; c < dx.channels(); ++c)
    for (T& v : dx.channel(c)) v = dy[c] * norm;
  return dx;
}

/// Fully connected layer, weights stored row-major (out, in).
struct Linear {
  std::size_t in = 0, out = 0;
  std::size_t weight_offset = 0, bias_offset = 0;

  template <class T>
  Tensor<T> forward(std::span<const T> params, const Tensor<T>& x) const {
    if (x.size() != in) {
      throw ShapeError("linear: expected " + std::to_string(in) + " inputs, got " + std::to_string(x.size()));
    }
    Tensor<T> y(out, 1, 1);
    for (std::size_t o = 0; o < out; ++o) {
      T acc = params[bias_offset + o];
      const T* row = params.data() + weight_offset + o * in;
      for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
      y[o] = acc;
    }
    return y;
  }

  template <class T>
  Tensor<T> backward(std::span<const T> params, const Tensor<T>& x, const Tensor<T>& dy,
                     std::span<T> grads) const {
    Tensor<T> dx(in, 1, 1);
    for (std::size_t o = 0; o < out; ++o) {
      const T g = dy[o];
      grads[bias_offset + o] += g;
      const T* row = params.data() + weight_offset + o * in;
      T* grow = grads.data() + weight_offset + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        grow[i] += g * x[i];
        dx[i] += g * row[i];
      }
    }
    return dx;
  }
};

}  // namespace ckdn
