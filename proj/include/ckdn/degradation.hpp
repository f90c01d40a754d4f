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

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ckdn/error.hpp"
#include "ckdn/image.hpp"

namespace ckdn {

enum class DegradationKind { downsample, gaussian_noise, jpeg };

inline std::string to_string(DegradationKind k) {
  switch (k) {
    case DegradationKind::downsample: return "downsample";
    case DegradationKind::gaussian_noise: return "gaussian_noise";
    case DegradationKind::jpeg: return "jpeg";
  }
  return "?";
}

inline DegradationKind degradation_kind_from_string(const std::string& s) {
  if (s == "downsample") return DegradationKind::downsample;
  if (s == "gaussian_noise") return DegradationKind::gaussian_noise;
  if (s == "jpeg") return DegradationKind::jpeg;
  throw ConfigError("unknown degradation kind '" + s + "' (expected downsample|gaussian_noise|jpeg)");
}

/// One degradation: downsample factor, noise std on the 0-255 scale, or
/// JPEG quality, depending on `kind`.
struct DegradationSpec {
  DegradationKind kind = DegradationKind::downsample;
  double strength = 2;
  std::uint64_t seed = 0;

  /// Short stable identifier, e.g. "down4", "noise25", "jpeg10".
  std::string id() const {
    const long s = std::lround(strength);
    const bool integral = static_cast<double>(s) == strength;
    const std::string v = integral ? std::to_string(s) : std::to_string(strength);
    switch (kind) {
      case DegradationKind::downsample: return "down" + v;
      case DegradationKind::gaussian_noise: return "noise" + v;
      case DegradationKind::jpeg: return "jpeg" + v;
    }
    return "?";
  }

  /// `standard_menu` restricts strengths to {2,4,8} / {25,50} / {30,10}.
  void validate(bool standard_menu = false) const {
    switch (kind) {
      case DegradationKind::downsample:
        if (strength < 1 || std::floor(strength) != strength) {
          throw ConfigError("downsample factor must be a positive integer, got " + std::to_string(strength));
        }
        if (standard_menu && strength != 2 && strength != 4 && strength != 8) {
          throw ConfigError("downsample factor must be 2, 4 or 8 in the standard menu");
        }
        break;
      case DegradationKind::gaussian_noise:
        if (!(strength >= 0) || !std::isfinite(strength)) throw ConfigError("noise level must be >= 0");
        if (standard_menu && strength != 25 && strength != 50) {
          throw ConfigError("noise level must be 25 or 50 in the standard menu");
        }
        break;
      case DegradationKind::jpeg:
        if (strength < 1 || strength > 100 || std::floor(strength) != strength) {
          throw ConfigError("jpeg quality must be an integer in [1, 100]");
        }
        if (standard_menu && strength != 30 && strength != 10) {
          throw ConfigError("jpeg quality must be 30 or 10 in the standard menu");
        }
        break;
    }
  }

  friend bool operator==(const DegradationSpec&, const DegradationSpec&) = default;
};

/// The seven reference degradations of the reference-quality sweep:
/// x2/x4/x8 bicubic downsampling, noise 25/50, JPEG Q30/Q10.
inline std::vector<DegradationSpec> reference_degradations() {
  return {{DegradationKind::downsample, 2, 11},     {DegradationKind::downsample, 4, 12},
          {DegradationKind::downsample, 8, 13},     {DegradationKind::gaussian_noise, 25, 14},
          {DegradationKind::gaussian_noise, 50, 15}, {DegradationKind::jpeg, 30, 16},
          {DegradationKind::jpeg, 10, 17}};
}

/// Inverse of DegradationSpec::id() for integral strengths ("down8",
/// "noise25", "jpeg10"). The seed is taken from the reference menu when the
/// id names one of its entries, else 0.
inline DegradationSpec degradation_from_id(const std::string& id) {
  DegradationSpec spec;
  std::string number;
  if (id.rfind("down", 0) == 0) {
    spec.kind = DegradationKind::downsample;
    number = id.substr(4);
  } else if (id.rfind("noise", 0) == 0) {
    spec.kind = DegradationKind::gaussian_noise;
    number = id.substr(5);
  } else if (id.rfind("jpeg", 0) == 0) {
    spec.kind = DegradationKind::jpeg;
    number = id.substr(4);
  } else {
    throw ConfigError("unknown degradation id '" + id + "' (expected downN, noiseN or jpegN)");
  }
  if (number.empty() || number.find_first_not_of("0123456789.") != std::string::npos) {
    throw ConfigError("bad degradation strength in '" + id + "'");
  }
  spec.strength = std::stod(number);
  for (const auto& p : reference_degradations())
    if (p.kind == spec.kind && p.strength == spec.strength) spec.seed = p.seed;
  spec.validate();
  return spec;
}

/// Applies `spec` and returns an image at the pristine resolution.
/// `seed_offset` decorrelates noise across contents sharing one spec.
inline Image degrade(const Image& pristine, const DegradationSpec& spec, std::uint64_t seed_offset = 0) {
  spec.validate();
  switch (spec.kind) {
    case DegradationKind::downsample: {
      const auto f = static_cast<std::size_t>(spec.strength);
      if (pristine.height() % f != 0 || pristine.width() % f != 0) {
        throw ShapeError("downsample: " + pristine.shape_string() + " not divisible by factor " + std::to_string(f));
      }
      const Image low = resize_bicubic(pristine, pristine.height() / f, pristine.width() / f);
      return clip01(resize_bicubic(low, pristine.height(), pristine.width()));
    }
    case DegradationKind::gaussian_noise: {
      std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                        static_cast<std::uint32_t>(seed_offset), static_cast<std::uint32_t>(seed_offset >> 32)};
      std::mt19937_64 rng(seq);
      std::normal_distribution<double> noise(0.0, spec.strength / 255.0);
      Image out = pristine;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(out[i] + noise(rng));
      return clip01(out);
    }
    case DegradationKind::jpeg:
      return decode_jpeg(encode_jpeg(pristine, static_cast<int>(spec.strength)));
  }
  throw ConfigError("unknown degradation kind");
}

}  // namespace ckdn
