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

// The three networks of the degraded-reference scorer:
//
//   reference embedding  E1 : degraded image  -> feature map  (stride 4)
//   quality embedding    E2 : restored image  -> feature map  (stride 4)
//   score predictor      S  : E1(D) - E2(R)   -> scalar
//
// A teacher copy of E1 sees the pristine image during training. The teacher
// has no quality embedding or score predictor of its own: it reads the one
// and only E2/S storage in CKDNParams.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ckdn/error.hpp"
#include "ckdn/layers.hpp"
#include "ckdn/tensor.hpp"

namespace ckdn {

template <class T>
using ImageTensor = Tensor<T>;
template <class T>
using FeatureMap = Tensor<T>;

inline constexpr std::size_t kModelStride = 4;

struct ModelConfig {
  std::size_t input_resolution = 288;
  std::size_t channel_width = 64;
  std::size_t stem_kernel = 7;
  std::size_t stem_stride = 2;
  std::size_t stem_pool = 2;
  std::size_t n_embed_blocks = 3;
  std::size_t n_csp_blocks = 4;
  std::size_t n_fc_layers = 3;
  std::vector<std::size_t> fc_hidden_sizes = {128, 64};
  Activation activation = Activation::relu;
  /// Average-pools the feature difference before the score predictor
  /// (1 keeps the full stride-4 map).
  std::size_t csp_input_downsample = 1;
  /// Student reference embedding reads the quality-embedding weights.
  bool shared_embeddings = false;
  /// Multiplier on the He-uniform init of each residual block's second
  /// convolution and of the final linear layer (1 = plain He-uniform).
  double init_residual_scale = 1.0;
  double init_head_scale = 1.0;
  /// Start the three embeddings from one shared draw (as they would from a
  /// common pretrained backbone) instead of independent draws.
  bool common_embedding_init = true;
  std::array<double, 3> mean = {0.485, 0.456, 0.406};
  std::array<double, 3> stddev = {0.229, 0.224, 0.225};

  static ModelConfig full() { return {}; }

  static ModelConfig desk() {
    ModelConfig c;
    c.input_resolution = 96;
    c.channel_width = 16;
    c.fc_hidden_sizes = {32, 16};
    return c;
  }

  void validate() const {
    detail::require<ConfigError>(stem_stride * stem_pool == kModelStride,
                                 "model: stem stride x pool must equal 4");
    detail::require<ConfigError>(input_resolution % kModelStride == 0 && input_resolution > 0,
                                 "model: input_resolution must be a positive multiple of 4");
    detail::require<ConfigError>(channel_width > 0, "model: channel_width must be positive");
    detail::require<ConfigError>(n_fc_layers >= 1 && fc_hidden_sizes.size() + 1 == n_fc_layers,
                                 "model: fc_hidden_sizes must list n_fc_layers - 1 sizes");
    detail::require<ConfigError>(csp_input_downsample == 1 || csp_input_downsample == 2 ||
                                     csp_input_downsample == 4,
                                 "model: csp_input_downsample must be 1, 2 or 4");
    for (double s : stddev) detail::require<ConfigError>(s > 0, "model: stddev must be positive");
    detail::require<ConfigError>(init_residual_scale >= 0 && init_head_scale >= 0,
                                 "model: init scales must be >= 0");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

namespace detail {

struct LayoutBuilder {
  std::size_t next = 0;
  Conv2d conv(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride, std::size_t pad) {
    Conv2d c{cin, cout, k, stride, pad, next, 0};
    next += c.weight_count();
    c.bias_offset = next;
    next += cout;
    return c;
  }
  Linear linear(std::size_t in, std::size_t out) {
    Linear l{in, out, next, 0};
    next += in * out;
    l.bias_offset = next;
    next += out;
    return l;
  }
};

template <class T>
void he_uniform(std::span<T> params, std::size_t weight_offset, std::size_t weight_count,
                std::size_t fan_in, std::mt19937_64& rng, double scale = 1.0) {
  const double bound = scale * std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::size_t i = 0; i < weight_count; ++i) params[weight_offset + i] = static_cast<T>(dist(rng));
}

}  // namespace detail

/// Pre-activation residual block: y = x + conv2(act(conv1(act(x)))).
struct ResidualBlock {
  Conv2d conv1, conv2;

  template <class T>
  struct Cache {
    Tensor<T> input;
    Tensor<T> mid;  // conv1 output, pre-activation
    ConvCache<T> c1, c2;
  };

  template <class T>
  Tensor<T> forward(std::span<const T> p, const Tensor<T>& x, Activation act, Cache<T>& cache) const {
    cache.input = x;
    cache.mid = conv1.forward(p, activate(act, x), cache.c1);
    Tensor<T> y = conv2.forward(p, activate(act, cache.mid), cache.c2);
    y += x;
    return y;
  }

  template <class T>
  Tensor<T> backward(std::span<const T> p, const Cache<T>& cache, const Tensor<T>& dy, Activation act,
                     std::span<T> g) const {
    Tensor<T> dmid = conv2.backward(p, cache.c2, dy, g);
    activate_backward(act, cache.mid, dmid);
    Tensor<T> dx = conv1.backward(p, cache.c1, dmid, g);
    activate_backward(act, cache.input, dx);
    dx += dy;
    return dx;
  }
};

/// Shared architecture of the reference (DTE) and quality (QSE) embeddings:
/// standardize, 7x7/2 convolution, 2x2 average pool, residual blocks.
class EmbeddingNet {
 public:
  template <class T>
  struct Cache {
    std::size_t in_h = 0, in_w = 0;
    ConvCache<T> stem;
    std::size_t stem_h = 0, stem_w = 0;
    std::vector<ResidualBlock::Cache<T>> blocks;
  };

  explicit EmbeddingNet(const ModelConfig& config) : config_(config) {
    config.validate();
    detail::LayoutBuilder b;
    stem_ = b.conv(3, config.channel_width, config.stem_kernel, config.stem_stride, config.stem_kernel / 2);
    for (std::size_t i = 0; i < config.n_embed_blocks; ++i) {
      ResidualBlock blk;
      blk.conv1 = b.conv(config.channel_width, config.channel_width, 3, 1, 1);
      blk.conv2 = b.conv(config.channel_width, config.channel_width, 3, 1, 1);
      blocks_.push_back(blk);
    }
    count_ = b.next;
  }

  std::size_t param_count() const { return count_; }
  const ModelConfig& config() const { return config_; }

  /// Offsets of every bias coordinate in the parameter vector.
  std::vector<std::size_t> bias_indices() const {
    std::vector<std::size_t> out;
    auto add = [&](const Conv2d& c) {
      for (std::size_t i = 0; i < c.cout; ++i) out.push_back(c.bias_offset + i);
    };
    add(stem_);
    for (const auto& blk : blocks_) add(blk.conv1), add(blk.conv2);
    return out;
  }

  template <class T>
  void initialize(std::span<T> params, std::mt19937_64& rng) const {
    std::fill(params.begin(), params.end(), T(0));
    detail::he_uniform(params, stem_.weight_offset, stem_.weight_count(), stem_.fan_in(), rng);
    for (const auto& blk : blocks_) {
      detail::he_uniform(params, blk.conv1.weight_offset, blk.conv1.weight_count(), blk.conv1.fan_in(), rng);
      detail::he_uniform(params, blk.conv2.weight_offset, blk.conv2.weight_count(), blk.conv2.fan_in(), rng,
                         config_.init_residual_scale);
    }
  }

  void check_image(std::size_t channels, std::size_t h, std::size_t w) const {
    if (channels != 3 || h == 0 || w == 0 || h % kModelStride != 0 || w % kModelStride != 0) {
      throw ShapeError("embedding: image must be (3, H, W) with H, W divisible by 4; got (" +
                       std::to_string(channels) + ", " + std::to_string(h) + ", " + std::to_string(w) + ")");
    }
  }

  template <class T>
  FeatureMap<T> forward(std::span<const T> params, const ImageTensor<T>& image, Cache<T>& cache) const {
    check_image(image.channels(), image.height(), image.width());
    if (params.size() != count_) {
      throw ShapeError("embedding: expected " + std::to_string(count_) + " parameters, got " +
                       std::to_string(params.size()));
    }
    Tensor<T> x = image;
    for (std::size_t c = 0; c < 3; ++c) {
      const T m = static_cast<T>(config_.mean[c]);
      const T inv = T(1) / static_cast<T>(config_.stddev[c]);
      for (T& v : x.channel(c)) v = (v - m) * inv;
    }
    cache.in_h = image.height();
    cache.in_w = image.width();
    Tensor<T> h = stem_.forward(params, x, cache.stem);
    cache.stem_h = h.height();
    cache.stem_w = h.width();
    h = avg_pool(h, config_.stem_pool);
    cache.blocks.resize(blocks_.size());
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      h = blocks_[i].forward(params, h, config_.activation, cache.blocks[i]);
    }
    return h;
  }

  template <class T>
  FeatureMap<T> forward(std::span<const T> params, const ImageTensor<T>& image) const {
    Cache<T> cache;
    return forward(params, image, cache);
  }

  /// Accumulates parameter gradients; returns dL/d(image) in [0,1] pixel
  /// units when `need_input_grad`.
  template <class T>
  ImageTensor<T> backward(std::span<const T> params, const Cache<T>& cache, const FeatureMap<T>& dfeat,
                          std::span<T> grads, bool need_input_grad = false) const {
    Tensor<T> d = dfeat;
    for (std::size_t i = blocks_.size(); i-- > 0;) {
      d = blocks_[i].backward(params, cache.blocks[i], d, config_.activation, grads);
    }
    d = avg_pool_backward(d, config_.stem_pool);
    Tensor<T> dx = stem_.backward(params, cache.stem, d, grads, need_input_grad);
    if (!need_input_grad) return {};
    for (std::size_t c = 0; c < 3; ++c) {
      const T inv = T(1) / static_cast<T>(config_.stddev[c]);
      for (T& v : dx.channel(c)) v *= inv;
    }
    return dx;
  }

 private:
  ModelConfig config_;
  Conv2d stem_;
  std::vector<ResidualBlock> blocks_;
  std::size_t count_ = 0;
};

/// Convolutional score predictor: residual blocks over the feature
/// difference, global average pooling, then fully connected layers. The
/// final layer is linear (unbounded score).
class ScorePredictor {
 public:
  template <class T>
  struct Cache {
    std::size_t in_h = 0, in_w = 0;
    std::vector<ResidualBlock::Cache<T>> blocks;
    Tensor<T> trunk;  // last block output, pre-activation
    std::vector<Tensor<T>> fc_inputs;
    std::vector<Tensor<T>> fc_pre;  // hidden pre-activations
  };

  explicit ScorePredictor(const ModelConfig& config) : config_(config) {
    config.validate();
    detail::LayoutBuilder b;
    const std::size_t c = config.channel_width;
    for (std::size_t i = 0; i < config.n_csp_blocks; ++i) {
      ResidualBlock blk;
      blk.conv1 = b.conv(c, c, 3, 1, 1);
      blk.conv2 = b.conv(c, c, 3, 1, 1);
      blocks_.push_back(blk);
    }
    std::size_t in = c;
    for (std::size_t h : config.fc_hidden_sizes) {
      fcs_.push_back(b.linear(in, h));
      in = h;
    }
    fcs_.push_back(b.linear(in, 1));
    count_ = b.next;
  }

  std::size_t param_count() const { return count_; }

  template <class T>
  void initialize(std::span<T> params, std::mt19937_64& rng) const {
    std::fill(params.begin(), params.end(), T(0));
    for (const auto& blk : blocks_) {
      detail::he_uniform(params, blk.conv1.weight_offset, blk.conv1.weight_count(), blk.conv1.fan_in(), rng);
      detail::he_uniform(params, blk.conv2.weight_offset, blk.conv2.weight_count(), blk.conv2.fan_in(), rng,
                         config_.init_residual_scale);
    }
    for (std::size_t i = 0; i < fcs_.size(); ++i) {
      const auto& fc = fcs_[i];
      const double scale = i + 1 == fcs_.size() ? config_.init_head_scale : 1.0;
      detail::he_uniform(params, fc.weight_offset, fc.in * fc.out, fc.in, rng, scale);
    }
  }

  template <class T>
  T forward(std::span<const T> params, const FeatureMap<T>& diff, Cache<T>& cache) const {
    const std::size_t ds = config_.csp_input_downsample;
    if (diff.channels() != config_.channel_width || diff.empty() || diff.height() % ds != 0 ||
        diff.width() % ds != 0) {
      throw ShapeError("score predictor: feature difference " + diff.shape_string() + " incompatible with " +
                       std::to_string(config_.channel_width) + " channels / downsample " + std::to_string(ds));
    }
    if (params.size() != count_) {
      throw ShapeError("score predictor: expected " + std::to_string(count_) + " parameters, got " +
                       std::to_string(params.size()));
    }
    cache.in_h = diff.height();
    cache.in_w = diff.width();
    Tensor<T> h = avg_pool(diff, ds);
    cache.blocks.resize(blocks_.size());
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      h = blocks_[i].forward(params, h, config_.activation, cache.blocks[i]);
    }
    cache.trunk = h;
    Tensor<T> v = global_avg_pool(activate(config_.activation, h));
    cache.fc_inputs.clear();
    cache.fc_pre.clear();
    for (std::size_t i = 0; i < fcs_.size(); ++i) {
      cache.fc_inputs.push_back(v);
      v = fcs_[i].forward(params, v);
      if (i + 1 < fcs_.size()) {
        cache.fc_pre.push_back(v);
        v = activate(config_.activation, v);
      }
    }
    return v[0];
  }

  template <class T>
  T forward(std::span<const T> params, const FeatureMap<T>& diff) const {
    Cache<T> cache;
    return forward(params, diff, cache);
  }

  /// Accumulates parameter gradients scaled by dL/dscore; returns dL/d(diff).
  template <class T>
  FeatureMap<T> backward(std::span<const T> params, const Cache<T>& cache, T dscore, std::span<T> grads) const {
    Tensor<T> d(1, 1, 1, dscore);
    for (std::size_t i = fcs_.size(); i-- > 0;) {
      if (i + 1 < fcs_.size()) activate_backward(config_.activation, cache.fc_pre[i], d);
      d = fcs_[i].backward(params, cache.fc_inputs[i], d, grads);
    }
    Tensor<T> dh = global_avg_pool_backward(d, cache.trunk.height(), cache.trunk.width());
    activate_backward(config_.activation, cache.trunk, dh);
    for (std::size_t i = blocks_.size(); i-- > 0;) {
      dh = blocks_[i].backward(params, cache.blocks[i], dh, config_.activation, grads);
    }
    return avg_pool_backward(dh, config_.csp_input_downsample);
  }

 private:
  ModelConfig config_;
  std::vector<ResidualBlock> blocks_;
  std::vector<Linear> fcs_;
  std::size_t count_ = 0;
};

/// Parameter groups of the full model. Exactly one storage location exists
/// for the quality embedding and the score predictor; both the student
/// (degraded-reference) and teacher (pristine-reference) paths read it.
template <class T>
struct CKDNParams {
  ModelConfig config;
  std::vector<T> dte;          // student reference embedding
  std::vector<T> dte_teacher;  // teacher reference embedding (training only)
  std::vector<T> qse;          // quality embedding
  std::vector<T> csp;          // score predictor

  /// Weights the student reference path actually reads.
  const std::vector<T>& student_reference() const { return config.shared_embeddings ? qse : dte; }

  template <class U>
  CKDNParams<U> cast() const {
    auto conv = [](const std::vector<T>& v) { return std::vector<U>(v.begin(), v.end()); };
    return CKDNParams<U>{config, conv(dte), conv(dte_teacher), conv(qse), conv(csp)};
  }

  friend bool operator==(const CKDNParams&, const CKDNParams&) = default;
};

enum class ParamGroupId { dte, dte_teacher, qse, csp };

inline constexpr std::array<ParamGroupId, 4> kAllGroups = {ParamGroupId::dte, ParamGroupId::dte_teacher,
                                                           ParamGroupId::qse, ParamGroupId::csp};

inline std::string to_string(ParamGroupId g) {
  switch (g) {
    case ParamGroupId::dte: return "theta_E1";
    case ParamGroupId::dte_teacher: return "theta_E1H";
    case ParamGroupId::qse: return "theta_E2";
    case ParamGroupId::csp: return "theta_S";
  }
  return "?";
}

template <class T>
std::vector<T>& group(CKDNParams<T>& p, ParamGroupId g) {
  switch (g) {
    case ParamGroupId::dte: return p.dte;
    case ParamGroupId::dte_teacher: return p.dte_teacher;
    case ParamGroupId::qse: return p.qse;
    case ParamGroupId::csp: return p.csp;
  }
  throw ConfigError("unknown parameter group");
}

template <class T>
const std::vector<T>& group(const CKDNParams<T>& p, ParamGroupId g) {
  return group(const_cast<CKDNParams<T>&>(p), g);
}

/// Gradient buffers mirroring CKDNParams.
template <class T>
struct CKDNGrads {
  std::vector<T> dte, dte_teacher, qse, csp;

  static CKDNGrads zeros_like(const CKDNParams<T>& p) {
    return {std::vector<T>(p.dte.size(), T(0)), std::vector<T>(p.dte_teacher.size(), T(0)),
            std::vector<T>(p.qse.size(), T(0)), std::vector<T>(p.csp.size(), T(0))};
  }

  /// Gradient buffer of the student reference path (redirected to the
  /// quality embedding when embeddings are shared).
  std::vector<T>& student_reference(const ModelConfig& c) { return c.shared_embeddings ? qse : dte; }

  void scale(T s) {
    for (auto* v : {&dte, &dte_teacher, &qse, &csp})
      for (T& x : *v) x *= s;
  }
};

template <class T>
std::vector<T>& group(CKDNGrads<T>& g, ParamGroupId id) {
  switch (id) {
    case ParamGroupId::dte: return g.dte;
    case ParamGroupId::dte_teacher: return g.dte_teacher;
    case ParamGroupId::qse: return g.qse;
    case ParamGroupId::csp: return g.csp;
  }
  throw ConfigError("unknown parameter group");
}

template <class T>
const std::vector<T>& group(const CKDNGrads<T>& g, ParamGroupId id) {
  return group(const_cast<CKDNGrads<T>&>(g), id);
}

/// Bundles the networks built from one ModelConfig.
class CKDNModel {
 public:
  explicit CKDNModel(const ModelConfig& config) : config_(config), embed_(config), csp_(config) {}

  const ModelConfig& config() const { return config_; }
  const EmbeddingNet& embedding() const { return embed_; }
  const ScorePredictor& predictor() const { return csp_; }

  /// He-uniform (fan-in) weights, zero biases. Each group draws from its own
  /// stream derived from `seed`; with common_embedding_init the reference
  /// embeddings copy the quality embedding's draw.
  template <class T>
  CKDNParams<T> initialize(std::uint64_t seed) const {
    CKDNParams<T> p;
    p.config = config_;
    p.dte.resize(embed_.param_count());
    p.dte_teacher.resize(embed_.param_count());
    p.qse.resize(embed_.param_count());
    p.csp.resize(csp_.param_count());
    auto stream = [seed](std::uint64_t k) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(k)};
      return std::mt19937_64(seq);
    };
    auto r1 = stream(1), r2 = stream(2), r3 = stream(3), r4 = stream(4);
    embed_.initialize(std::span<T>(p.qse), r3);
    if (config_.common_embedding_init) {
      p.dte = p.qse;
      p.dte_teacher = p.qse;
    } else {
      embed_.initialize(std::span<T>(p.dte), r1);
      embed_.initialize(std::span<T>(p.dte_teacher), r2);
    }
    csp_.initialize(std::span<T>(p.csp), r4);
    return p;
  }

  template <class T>
  void check_params(const CKDNParams<T>& p) const {
    const bool ok = p.dte.size() == embed_.param_count() && p.dte_teacher.size() == embed_.param_count() &&
                    p.qse.size() == embed_.param_count() && p.csp.size() == csp_.param_count();
    if (!ok) throw ShapeError("parameter groups do not match the model configuration");
  }

 private:
  ModelConfig config_;
  EmbeddingNet embed_;
  ScorePredictor csp_;
};

template <class T>
FeatureMap<T> dte_forward(const CKDNModel& model, std::span<const T> params, const ImageTensor<T>& image) {
  return model.embedding().forward(params, image);
}

template <class T>
FeatureMap<T> qse_forward(const CKDNModel& model, std::span<const T> params, const ImageTensor<T>& image) {
  return model.embedding().forward(params, image);
}

template <class T>
T csp_forward(const CKDNModel& model, std::span<const T> params, const FeatureMap<T>& diff) {
  return model.predictor().forward(params, diff);
}

namespace detail {

template <class T>
void check_pair(const ImageTensor<T>& a, const ImageTensor<T>& b, const char* who) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(who) + ": resolution mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

}  // namespace detail

/// Degraded-reference score S(E1(D) - E2(R)). Never reads the teacher
/// reference embedding.
template <class T>
T score(const CKDNModel& model, const CKDNParams<T>& params, const ImageTensor<T>& degraded,
        const ImageTensor<T>& restored) {
  detail::check_pair(degraded, restored, "score");
  FeatureMap<T> diff = dte_forward<T>(model, params.student_reference(), degraded);
  diff -= qse_forward<T>(model, params.qse, restored);
  return csp_forward<T>(model, params.csp, diff);
}

/// Full-reference score S(E1H(H) - E2(R)) through the shared E2/S storage.
template <class T>
T teacher_score(const CKDNModel& model, const CKDNParams<T>& params, const ImageTensor<T>& pristine,
                const ImageTensor<T>& restored) {
  detail::check_pair(pristine, restored, "teacher_score");
  FeatureMap<T> diff = dte_forward<T>(model, params.dte_teacher, pristine);
  diff -= qse_forward<T>(model, params.qse, restored);
  return csp_forward<T>(model, params.csp, diff);
}

}  // namespace ckdn
