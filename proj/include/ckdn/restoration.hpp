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

// Classical stand-ins for image-restoration algorithms. Each restorer maps a
// degraded image (already at pristine resolution) to a restored image of the
// same size and is deterministic given its seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ckdn/error.hpp"
#include "ckdn/image.hpp"

namespace ckdn {

enum class RestorerKind {
  identity,
  bicubic_up,
  box_blur_up,
  median_denoise,
  gaussian_denoise,
  sharpen_up,
  noise_injecting
};

inline std::string to_string(RestorerKind k) {
  switch (k) {
    case RestorerKind::identity: return "identity";
    case RestorerKind::bicubic_up: return "bicubic_up";
    case RestorerKind::box_blur_up: return "box_blur_up";
    case RestorerKind::median_denoise: return "median_denoise";
    case RestorerKind::gaussian_denoise: return "gaussian_denoise";
    case RestorerKind::sharpen_up: return "sharpen_up";
    case RestorerKind::noise_injecting: return "noise_injecting";
  }
  return "?";
}

inline RestorerKind restorer_kind_from_string(const std::string& s) {
  for (auto k : {RestorerKind::identity, RestorerKind::bicubic_up, RestorerKind::box_blur_up,
                 RestorerKind::median_denoise, RestorerKind::gaussian_denoise, RestorerKind::sharpen_up,
                 RestorerKind::noise_injecting}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown restorer kind '" + s + "'");
}

/// Kind-specific parameters (defaults in brackets):
///   bicubic_up       {factor [2]}           bicubic re-interpolation through a lower resolution
///   box_blur_up      {radius [1]}
///   median_denoise   {radius [1]}
///   gaussian_denoise {sigma [1.0]}
///   sharpen_up       {sigma [1.0], amount [0.8]}
///   noise_injecting  {blur sigma [1.0], noise std on 0-255 [6]}
struct RestorerSpec {
  std::string id;
  RestorerKind kind = RestorerKind::identity;
  std::vector<double> params;

  double param(std::size_t i, double fallback) const { return i < params.size() ? params[i] : fallback; }

  friend bool operator==(const RestorerSpec&, const RestorerSpec&) = default;
};

inline Image restore(const Image& degraded, const RestorerSpec& spec, std::uint64_t seed = 0) {
  switch (spec.kind) {
    case RestorerKind::identity: return degraded;
    case RestorerKind::bicubic_up: {
      const auto f = static_cast<std::size_t>(spec.param(0, 2));
      if (f < 1) throw ConfigError("bicubic_up factor must be >= 1");
      const std::size_t h = std::max<std::size_t>(1, degraded.height() / f);
      const std::size_t w = std::max<std::size_t>(1, degraded.width() / f);
      return clip01(resize_bicubic(resize_bicubic(degraded, h, w), degraded.height(), degraded.width()));
    }
    case RestorerKind::box_blur_up: return box_blur(degraded, static_cast<std::size_t>(spec.param(0, 1)));
    case RestorerKind::median_denoise: return median_filter(degraded, static_cast<std::size_t>(spec.param(0, 1)));
    case RestorerKind::gaussian_denoise: return gaussian_blur(degraded, spec.param(0, 1.0));
    case RestorerKind::sharpen_up: return unsharp_mask(degraded, spec.param(0, 1.0), spec.param(1, 0.8));
    case RestorerKind::noise_injecting: {
      Image out = gaussian_blur(degraded, spec.param(0, 1.0));
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5eedu};
      std::mt19937_64 rng(seq);
      std::normal_distribution<double> noise(0.0, spec.param(1, 6.0) / 255.0);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(out[i] + noise(rng));
      return clip01(out);
    }
  }
  throw ConfigError("unknown restorer kind");
}

}  // namespace ckdn
