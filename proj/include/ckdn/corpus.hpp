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

// Procedural pristine images for environments without a photo corpus:
// gradient backgrounds, soft-edged shapes, oriented gratings and multi-octave
// value noise, with a per-image detail level.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "ckdn/image.hpp"

namespace ckdn {

namespace detail {

inline double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

/// Bilinearly upsampled random lattice, `cells` lattice cells across.
inline std::vector<double> value_noise(std::size_t size, std::size_t cells, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> lattice((cells + 1) * (cells + 1));
  for (double& v : lattice) v = u(rng);
  std::vector<double> out(size * size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double fy = static_cast<double>(y) * static_cast<double>(cells) / static_cast<double>(size);
      const double fx = static_cast<double>(x) * static_cast<double>(cells) / static_cast<double>(size);
      const auto iy = static_cast<std::size_t>(fy), ix = static_cast<std::size_t>(fx);
      const double ty = smoothstep(0, 1, fy - static_cast<double>(iy));
      const double tx = smoothstep(0, 1, fx - static_cast<double>(ix));
      auto at = [&](std::size_t yy, std::size_t xx) { return lattice[yy * (cells + 1) + xx]; };
      const double top = at(iy, ix) * (1 - tx) + at(iy, ix + 1) * tx;
      const double bot = at(iy + 1, ix) * (1 - tx) + at(iy + 1, ix + 1) * tx;
      out[y * size + x] = top * (1 - ty) + bot * ty;
    }
  return out;
}

}  // namespace detail

inline Image generate_procedural_image(std::size_t size, std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0xc0de5u};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;
  const double s = static_cast<double>(size);

  Image img(3, size, size);
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = 0.1 + 0.8 * u(rng);
    c1[c] = 0.1 + 0.8 * u(rng);
  }
  const double angle = two_pi * u(rng);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double t = 0.5 + 0.5 * ((static_cast<double>(x) / s - 0.5) * std::cos(angle) +
                                    (static_cast<double>(y) / s - 0.5) * std::sin(angle));
      for (std::size_t c = 0; c < 3; ++c) img(c, y, x) = static_cast<float>(c0[c] * (1 - t) + c1[c] * t);
    }

  const double detail = u(rng);  // 0 = smooth, 1 = busy
  const int n_shapes = 2 + static_cast<int>(detail * 8.0 + u(rng) * 3.0);
  for (int k = 0; k < n_shapes; ++k) {
    const double cx = s * u(rng), cy = s * u(rng);
    const double rx = s * (0.06 + 0.3 * u(rng)), ry = s * (0.06 + 0.3 * u(rng));
    const bool ellipse = u(rng) < 0.5;
    const double edge = 0.5 + 2.5 * u(rng) * (1.0 - detail);
    double col[3];
    for (double& c : col) c = u(rng);
    const bool textured = u(rng) < 0.3 + 0.5 * detail;
    const double freq = (2.0 + 10.0 * u(rng)) / s * two_pi;
    const double theta = two_pi * u(rng), amp = 0.1 + 0.25 * u(rng);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double dx = (static_cast<double>(x) - cx), dy = (static_cast<double>(y) - cy);
        double dist;
        if (ellipse) {
          dist = (std::sqrt((dx / rx) * (dx / rx) + (dy / ry) * (dy / ry)) - 1.0) * std::min(rx, ry);
        } else {
          dist = std::max(std::abs(dx) - rx, std::abs(dy) - ry);
        }
        const double alpha = 1.0 - detail::smoothstep(-edge, edge, dist);
        if (alpha <= 0) continue;
        double tex = 0;
        if (textured) {
          tex = amp * std::sin(freq * (static_cast<double>(x) * std::cos(theta) + static_cast<double>(y) * std::sin(theta)));
        }
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = std::clamp(col[c] + tex, 0.0, 1.0);
          img(c, y, x) = static_cast<float>(img(c, y, x) * (1 - alpha) + v * alpha);
        }
      }
  }

  const double noise_amp = 0.02 + 0.12 * detail;
  std::vector<double> noise(size * size, 0.0);
  double octave_amp = 1.0;
  for (std::size_t cells = 4; cells <= size / 2; cells *= 2) {
    const auto layer = detail::value_noise(size, cells, rng);
    for (std::size_t i = 0; i < noise.size(); ++i) noise[i] += octave_amp * layer[i];
    octave_amp *= 0.6 + 0.3 * detail;
  }
  double tint[3];
  for (double& t : tint) t = 0.6 + 0.4 * u(rng);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < noise.size(); ++i) img[c * noise.size() + i] += static_cast<float>(noise_amp * tint[c] * noise[i]);
  return clip01(img);
}

/// Writes `count` images named content_0000.png, ... into `dir`.
inline std::vector<std::filesystem::path> generate_corpus(const std::filesystem::path& dir, std::size_t count,
                                                          std::size_t size, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  for (std::size_t i = 0; i < count; ++i) {
    char name[48];
    std::snprintf(name, sizeof(name), "content_%04zu.png", i);
    const auto path = dir / name;
    save_png(path, generate_procedural_image(size, seed * 1000003ULL + i));
    paths.push_back(path);
  }
  return paths;
}

}  // namespace ckdn
