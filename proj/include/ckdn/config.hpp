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

// Run configuration documents (JSON).
//
//   {
//     "format_version": 1,
//     "profile": "desk",                 // informational
//     "dataset": "data/desk",            // dataset directory
//     "output_dir": "runs/ckd_pret",
//     "model": { ModelConfig without the variant fields },
//     "train": { TrainConfig, including the variant flags },
//     "loss":  { "lambda": 10, "elo_M": 400, "teacher_stop_gradient": false, "sigmoid_head": false }
//   }
//
// Omitted keys take the profile default; unknown keys are rejected. Relative
// paths resolve against the config file's directory.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "ckdn/error.hpp"
#include "ckdn/hash.hpp"
#include "ckdn/losses.hpp"
#include "ckdn/model.hpp"
#include "json.hpp"

namespace ckdn {

using json = nlohmann::json;

enum class PretrainLoss { relative, absolute, none };

inline std::string to_string(PretrainLoss l) {
  switch (l) {
    case PretrainLoss::relative: return "relative";
    case PretrainLoss::absolute: return "absolute";
    case PretrainLoss::none: return "none";
  }
  return "?";
}

inline PretrainLoss pretrain_loss_from_string(const std::string& s) {
  if (s == "relative") return PretrainLoss::relative;
  if (s == "absolute") return PretrainLoss::absolute;
  if (s == "none") return PretrainLoss::none;
  throw ConfigError("unknown pretrain_loss '" + s + "' (expected relative|absolute|none)");
}

enum class OptimizerKind { sgd, adam };

inline std::string to_string(OptimizerKind o) { return o == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd|adam)");
}

struct TrainConfig {
  std::size_t stage1_epochs = 10;
  std::size_t stage2_epochs = 20;
  double base_lr = 0.15;
  /// Warm-up length as a fraction of the first epoch's steps.
  double warmup_epochs = 1.0;
  double momentum = 0.9;
  OptimizerKind optimizer = OptimizerKind::sgd;
  /// Adam second-moment decay; the first-moment decay is `momentum`.
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;

  // Variant flags.
  bool use_ckd = true;
  bool use_pretrain = true;
  PretrainLoss pretrain_loss = PretrainLoss::relative;
  bool shared_embeddings = false;
  std::size_t csp_input_downsample = 1;
  bool teacher_stop_gradient = false;

  // Data handling.
  /// Random square crop applied identically to H, D and R (0 = full image).
  std::size_t crop_size = 0;
  bool flip = true;
  /// Stage-2 samples per epoch (0 = the whole training split).
  std::size_t samples_per_epoch = 0;
  /// Stage-1 pairs per epoch (0 = as many as stage-2 samples per epoch).
  std::size_t pairs_per_epoch = 0;
  /// Rescale gradients whose global norm exceeds this (0 = off).
  double grad_clip_norm = 0;
  /// Validation every this many epochs; the final epoch is always validated.
  std::size_t eval_every = 1;

  static TrainConfig full() { return {}; }

  static TrainConfig desk() {
    TrainConfig t;
    t.stage1_epochs = 8;
    t.stage2_epochs = 20;
    t.optimizer = OptimizerKind::adam;
    t.base_lr = 1e-3;
    t.samples_per_epoch = 512;
    t.grad_clip_norm = 1.0;
    t.eval_every = 5;
    return t;
  }

  void validate() const {
    if (stage1_epochs < 1 || stage2_epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(base_lr > 0) || !std::isfinite(base_lr)) throw ConfigError("train: base_lr must be > 0");
    if (!(warmup_epochs >= 0)) throw ConfigError("train: warmup_epochs must be >= 0");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train: momentum must be in [0, 1)");
    if (!(adam_beta2 >= 0 && adam_beta2 < 1)) throw ConfigError("train: adam_beta2 must be in [0, 1)");
    if (!(adam_eps > 0)) throw ConfigError("train: adam_eps must be > 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (use_pretrain && pretrain_loss == PretrainLoss::none) {
      throw ConfigError("train: use_pretrain requires pretrain_loss relative or absolute");
    }
    if (csp_input_downsample != 1 && csp_input_downsample != 2 && csp_input_downsample != 4) {
      throw ConfigError("train: csp_input_downsample must be 1, 2 or 4");
    }
    if (crop_size % kModelStride != 0) throw ConfigError("train: crop_size must be a multiple of 4");
    if (!(grad_clip_norm >= 0)) throw ConfigError("train: grad_clip_norm must be >= 0");
    if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
  }
};

/// Human-readable ablation row for a variant.
inline std::string ablation_label(const TrainConfig& t) {
  std::string s = "CKDN";
  if (t.use_ckd) s += t.teacher_stop_gradient ? " + CKD(stop-grad)" : " + CKD";
  if (t.use_pretrain) s += t.pretrain_loss == PretrainLoss::absolute ? " + L_a Pret." : " + Pret.";
  s += t.shared_embeddings ? " [shared]" : " [unshared]";
  if (t.csp_input_downsample != 1) s += " [csp/" + std::to_string(t.csp_input_downsample) + "]";
  return s;
}

namespace detail {

inline void reject_unknown_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <class V>
void read_opt(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace detail

inline void to_json(json& j, const ModelConfig& c) {
  j = json{{"input_resolution", c.input_resolution},
           {"channel_width", c.channel_width},
           {"stem_kernel", c.stem_kernel},
           {"stem_stride", c.stem_stride},
           {"stem_pool", c.stem_pool},
           {"n_embed_blocks", c.n_embed_blocks},
           {"n_csp_blocks", c.n_csp_blocks},
           {"n_fc_layers", c.n_fc_layers},
           {"fc_hidden_sizes", c.fc_hidden_sizes},
           {"activation", to_string(c.activation)},
           {"csp_input_downsample", c.csp_input_downsample},
           {"shared_embeddings", c.shared_embeddings},
           {"init_residual_scale", c.init_residual_scale},
           {"init_head_scale", c.init_head_scale},
           {"common_embedding_init", c.common_embedding_init},
           {"mean", c.mean},
           {"stddev", c.stddev}};
}

/// Reads over the defaults already in `c`.
inline void from_json(const json& j, ModelConfig& c) {
  detail::read_opt(j, "input_resolution", c.input_resolution);
  detail::read_opt(j, "channel_width", c.channel_width);
  detail::read_opt(j, "stem_kernel", c.stem_kernel);
  detail::read_opt(j, "stem_stride", c.stem_stride);
  detail::read_opt(j, "stem_pool", c.stem_pool);
  detail::read_opt(j, "n_embed_blocks", c.n_embed_blocks);
  detail::read_opt(j, "n_csp_blocks", c.n_csp_blocks);
  detail::read_opt(j, "n_fc_layers", c.n_fc_layers);
  detail::read_opt(j, "fc_hidden_sizes", c.fc_hidden_sizes);
  if (j.contains("activation")) c.activation = activation_from_string(j.at("activation").get<std::string>());
  detail::read_opt(j, "csp_input_downsample", c.csp_input_downsample);
  detail::read_opt(j, "shared_embeddings", c.shared_embeddings);
  detail::read_opt(j, "init_residual_scale", c.init_residual_scale);
  detail::read_opt(j, "init_head_scale", c.init_head_scale);
  detail::read_opt(j, "common_embedding_init", c.common_embedding_init);
  detail::read_opt(j, "mean", c.mean);
  detail::read_opt(j, "stddev", c.stddev);
}

inline void to_json(json& j, const TrainConfig& t) {
  j = json{{"stage1_epochs", t.stage1_epochs},
           {"stage2_epochs", t.stage2_epochs},
           {"base_lr", t.base_lr},
           {"warmup_epochs", t.warmup_epochs},
           {"momentum", t.momentum},
           {"optimizer", to_string(t.optimizer)},
           {"adam_beta2", t.adam_beta2},
           {"adam_eps", t.adam_eps},
           {"batch_size", t.batch_size},
           {"seed", t.seed},
           {"use_ckd", t.use_ckd},
           {"use_pretrain", t.use_pretrain},
           {"pretrain_loss", to_string(t.pretrain_loss)},
           {"shared_embeddings", t.shared_embeddings},
           {"csp_input_downsample", t.csp_input_downsample},
           {"teacher_stop_gradient", t.teacher_stop_gradient},
           {"crop_size", t.crop_size},
           {"flip", t.flip},
           {"samples_per_epoch", t.samples_per_epoch},
           {"pairs_per_epoch", t.pairs_per_epoch},
           {"grad_clip_norm", t.grad_clip_norm},
           {"eval_every", t.eval_every}};
}

inline void from_json(const json& j, TrainConfig& t) {
  detail::read_opt(j, "stage1_epochs", t.stage1_epochs);
  detail::read_opt(j, "stage2_epochs", t.stage2_epochs);
  detail::read_opt(j, "base_lr", t.base_lr);
  detail::read_opt(j, "warmup_epochs", t.warmup_epochs);
  detail::read_opt(j, "momentum", t.momentum);
  if (j.contains("optimizer")) t.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
  detail::read_opt(j, "adam_beta2", t.adam_beta2);
  detail::read_opt(j, "adam_eps", t.adam_eps);
  detail::read_opt(j, "batch_size", t.batch_size);
  detail::read_opt(j, "seed", t.seed);
  detail::read_opt(j, "use_ckd", t.use_ckd);
  detail::read_opt(j, "use_pretrain", t.use_pretrain);
  if (j.contains("pretrain_loss")) t.pretrain_loss = pretrain_loss_from_string(j.at("pretrain_loss").get<std::string>());
  detail::read_opt(j, "shared_embeddings", t.shared_embeddings);
  detail::read_opt(j, "csp_input_downsample", t.csp_input_downsample);
  detail::read_opt(j, "teacher_stop_gradient", t.teacher_stop_gradient);
  detail::read_opt(j, "crop_size", t.crop_size);
  detail::read_opt(j, "flip", t.flip);
  detail::read_opt(j, "samples_per_epoch", t.samples_per_epoch);
  detail::read_opt(j, "pairs_per_epoch", t.pairs_per_epoch);
  detail::read_opt(j, "grad_clip_norm", t.grad_clip_norm);
  detail::read_opt(j, "eval_every", t.eval_every);
}

inline void to_json(json& j, const LossWeights& w) {
  j = json{{"lambda", w.lambda},
           {"elo_M", w.elo_M},
           {"teacher_stop_gradient", w.teacher_stop_gradient},
           {"sigmoid_head", w.sigmoid_head}};
}

inline void from_json(const json& j, LossWeights& w) {
  detail::read_opt(j, "lambda", w.lambda);
  detail::read_opt(j, "elo_M", w.elo_M);
  detail::read_opt(j, "teacher_stop_gradient", w.teacher_stop_gradient);
  detail::read_opt(j, "sigmoid_head", w.sigmoid_head);
}

/// Hash of the fields that fix parameter shapes and the network function
/// (everything except the embedding-sharing switch).
inline std::string architecture_hash(const ModelConfig& c) {
  json j = c;
  j.erase("shared_embeddings");
  return sha256_hex(j.dump());
}

struct RunConfig {
  int format_version = 1;
  std::string profile = "desk";
  std::filesystem::path dataset;
  std::filesystem::path output_dir;
  ModelConfig model = ModelConfig::desk();
  TrainConfig train = TrainConfig::desk();
  LossWeights loss;

  static RunConfig full() {
    RunConfig r;
    r.profile = "full";
    r.model = ModelConfig::full();
    r.train = TrainConfig::full();
    return r;
  }

  static RunConfig desk() { return {}; }

  /// Model configuration with the variant flags applied.
  ModelConfig effective_model() const {
    ModelConfig m = model;
    m.shared_embeddings = train.shared_embeddings;
    m.csp_input_downsample = train.csp_input_downsample;
    return m;
  }

  /// Loss weights with the trainer's stop-gradient flag applied.
  LossWeights effective_loss() const {
    LossWeights w = loss;
    w.teacher_stop_gradient = w.teacher_stop_gradient || train.teacher_stop_gradient;
    return w;
  }

  void validate() const {
    if (format_version != 1) throw ConfigError("config: unsupported format_version");
    effective_model().validate();
    train.validate();
    loss.validate();
    if (train.crop_size > model.input_resolution) throw ConfigError("train: crop_size exceeds input_resolution");
  }

  /// Identity of a run: everything that influences the numbers it produces.
  json hashed_view() const {
    return json{{"format_version", format_version}, {"model", effective_model()}, {"train", train},
                {"loss", effective_loss()}};
  }

  std::string hash() const { return sha256_hex(hashed_view().dump()); }
};

inline void to_json(json& j, const RunConfig& r) {
  json model = r.model;
  model.erase("shared_embeddings");
  model.erase("csp_input_downsample");
  j = json{{"format_version", r.format_version},
           {"profile", r.profile},
           {"dataset", r.dataset.generic_string()},
           {"output_dir", r.output_dir.generic_string()},
           {"model", model},
           {"train", r.train},
           {"loss", r.loss}};
}

/// Schema-checked parse; `base_dir` anchors relative paths.
inline RunConfig parse_run_config(const json& j, const std::filesystem::path& base_dir = {}) {
  try {
    detail::reject_unknown_keys(j, {"format_version", "profile", "dataset", "output_dir", "model", "train", "loss"},
                                "config");
    const std::string profile = j.value("profile", std::string("desk"));
    RunConfig r;
    if (profile == "full") r = RunConfig::full();
    else if (profile != "desk") throw ConfigError("config: profile must be desk or full");
    r.format_version = j.value("format_version", 1);
    if (j.contains("dataset")) r.dataset = j.at("dataset").get<std::string>();
    if (j.contains("output_dir")) r.output_dir = j.at("output_dir").get<std::string>();
    if (!base_dir.empty()) {
      if (!r.dataset.empty() && r.dataset.is_relative()) r.dataset = base_dir / r.dataset;
      if (!r.output_dir.empty() && r.output_dir.is_relative()) r.output_dir = base_dir / r.output_dir;
    }
    if (j.contains("model")) {
      detail::reject_unknown_keys(j.at("model"),
                                  {"input_resolution", "channel_width", "stem_kernel", "stem_stride", "stem_pool",
                                   "n_embed_blocks", "n_csp_blocks", "n_fc_layers", "fc_hidden_sizes",
                                   "activation", "init_residual_scale", "init_head_scale", "common_embedding_init", "mean", "stddev"},
                                  "config.model");
      from_json(j.at("model"), r.model);
    }
    if (j.contains("train")) {
      json keys = r.train;
      std::set<std::string> allowed;
      for (const auto& [k, v] : keys.items()) allowed.insert(k);
      detail::reject_unknown_keys(j.at("train"), allowed, "config.train");
      from_json(j.at("train"), r.train);
    }
    if (j.contains("loss")) {
      detail::reject_unknown_keys(j.at("loss"), {"lambda", "elo_M", "teacher_stop_gradient", "sigmoid_head"},
                                  "config.loss");
      from_json(j.at("loss"), r.loss);
    }
    r.validate();
    return r;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

}  // namespace ckdn
