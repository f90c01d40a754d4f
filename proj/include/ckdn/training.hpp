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

// Two-stage optimization, evaluation and the reference-degradation sweep.
//
// Stage 1 fits the quality embedding and score predictor (relative or
// absolute regression); stage 2 trains the full network with the
// conditional distillation objective or plain absolute regression.
// Absolute targets are standardized pseudo-MOS, z = (mos - mu) / M; the
// relative targets use raw MOS through the Elo transform.
//
// Per-run output directory:
//   config.json      run config echo, config hash, toolkit version
//   metrics.tsv      one row per epoch (columns in kMetricsColumns)
//   pretrain_latest.ckpt, ckdn_latest.ckpt, ckdn_best.ckpt

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ckdn/checkpoint.hpp"
#include "ckdn/config.hpp"
#include "ckdn/dataset.hpp"
#include "ckdn/error.hpp"
#include "ckdn/losses.hpp"
#include "ckdn/metrics.hpp"
#include "ckdn/model.hpp"
#include "ckdn/optim.hpp"

namespace ckdn {

enum class EvalMode { dr, fr, nr };

inline std::string to_string(EvalMode m) {
  switch (m) {
    case EvalMode::dr: return "dr";
    case EvalMode::fr: return "fr";
    case EvalMode::nr: return "nr";
  }
  return "?";
}

inline EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "dr") return EvalMode::dr;
  if (s == "fr") return EvalMode::fr;
  if (s == "nr") return EvalMode::nr;
  throw ConfigError("unknown evaluation mode '" + s + "' (expected dr|fr|nr)");
}

struct EvalResult {
  double srcc = 0, plcc = 0, accuracy = 0;
  std::size_t n = 0, n_pairs = 0;
  std::vector<double> predictions, targets;
};

/// All unordered pairs of sample positions that share a (content,
/// degradation) cell, as positions into `indices`.
inline std::vector<std::pair<std::size_t, std::size_t>> judgment_pairs(const Dataset& ds,
                                                                       const std::vector<std::size_t>& indices) {
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> cells;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& r = ds.record(indices[k]);
    cells[{r.content_id, r.degradation_id}].push_back(k);
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& [key, members] : cells)
    for (std::size_t a = 0; a < members.size(); ++a)
      for (std::size_t b = a + 1; b < members.size(); ++b) out.emplace_back(members[a], members[b]);
  return out;
}

/// SRCC, PLCC and pairwise accuracy of arbitrary predictions. Correlations
/// of a constant prediction list are undefined and reported as NaN.
inline EvalResult metrics_from_predictions(std::vector<double> predictions, std::vector<double> targets,
                                           const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  EvalResult r;
  r.n = predictions.size();
  const bool constant = std::adjacent_find(predictions.begin(), predictions.end(), std::not_equal_to<>()) == predictions.end();
  if (constant) {
    r.srcc = r.plcc = std::numeric_limits<double>::quiet_NaN();
  } else {
    r.srcc = metrics::srcc(predictions, targets);
    r.plcc = metrics::plcc(predictions, targets);
  }
  r.accuracy = metrics::pairwise_accuracy(predictions, targets, pairs);
  for (const auto& [i, j] : pairs) r.n_pairs += targets[i] != targets[j];
  r.predictions = std::move(predictions);
  r.targets = std::move(targets);
  return r;
}

namespace detail {

/// Embedding features memoized by image file (content-addressed, so equal
/// names mean equal pixels).
class FeatureCache {
 public:
  FeatureCache(const CKDNModel& model, std::span<const float> params, const Dataset& ds)
      : model_(model), params_(params), ds_(ds) {}

  const FeatureMap<float>& get(const std::string& file) {
    auto it = cache_.find(file);
    if (it == cache_.end()) it = cache_.emplace(file, model_.embedding().forward(params_, ds_.image(file))).first;
    return it->second;
  }

 private:
  const CKDNModel& model_;
  std::span<const float> params_;
  const Dataset& ds_;
  std::map<std::string, FeatureMap<float>> cache_;
};

}  // namespace detail

/// Scores every sample of `split`:
///   dr  S(E1(D) - E2(R))     degraded reference
///   fr  S(E1H(H) - E2(R))    pristine reference through the teacher
///   nr  S(E1(R) - E2(R))     the restored image as its own reference
inline EvalResult evaluate(const CKDNModel& model, const CKDNParams<float>& params, const Dataset& ds, Split split,
                           EvalMode mode) {
  model.check_params(params);
  const auto indices = ds.split_indices(split);
  if (indices.empty()) throw DataError("evaluate: split '" + to_string(split) + "' is empty");
  const std::span<const float> ref_params =
      mode == EvalMode::fr ? std::span<const float>(params.dte_teacher) : std::span<const float>(params.student_reference());
  detail::FeatureCache refs(model, ref_params, ds);
  detail::FeatureCache quality(model, std::span<const float>(params.qse), ds);
  std::vector<double> pred, target;
  for (std::size_t i : indices) {
    const auto& r = ds.record(i);
    const std::string& ref_file = mode == EvalMode::dr ? r.degraded : mode == EvalMode::fr ? r.pristine : r.restored;
    const float s = model.predictor().forward(std::span<const float>(params.csp), refs.get(ref_file) - quality.get(r.restored));
    if (!std::isfinite(s)) throw NumericError("evaluate: non-finite score for sample " + r.sample_id);
    pred.push_back(s);
    target.push_back(r.mos);
  }
  return metrics_from_predictions(std::move(pred), std::move(target), judgment_pairs(ds, indices));
}

struct SweepRow {
  DegradationSpec spec;
  EvalResult result;
};

/// For each spec, re-degrades every pristine image of `split` with that
/// spec and uses it as the reference for all of the content's samples.
inline std::vector<SweepRow> reference_sweep(const CKDNModel& model, const CKDNParams<float>& params, const Dataset& ds,
                                             const std::vector<DegradationSpec>& specs, Split split = Split::val) {
  for (const auto& s : specs) s.validate();
  const auto indices = ds.split_indices(split);
  if (indices.empty()) throw DataError("reference_sweep: split '" + to_string(split) + "' is empty");
  const auto pairs = judgment_pairs(ds, indices);
  detail::FeatureCache quality(model, std::span<const float>(params.qse), ds);
  const std::span<const float> ref_params(params.student_reference());
  std::vector<SweepRow> rows;
  for (const auto& spec : specs) {
    std::map<std::string, FeatureMap<float>> refs;
    std::vector<double> pred, target;
    for (std::size_t i : indices) {
      const auto& r = ds.record(i);
      auto it = refs.find(r.content_id);
      if (it == refs.end()) {
        const Image degraded =
            quantize8(degrade(ds.image(r.pristine), spec, ds.degradation_seed(ds.content_index(r.content_id))));
        it = refs.emplace(r.content_id, model.embedding().forward(ref_params, degraded)).first;
      }
      pred.push_back(model.predictor().forward(std::span<const float>(params.csp), it->second - quality.get(r.restored)));
      target.push_back(r.mos);
    }
    rows.push_back({spec, metrics_from_predictions(std::move(pred), std::move(target), pairs)});
  }
  return rows;
}

/// Bicubic resize to the model resolution when the size differs.
inline Image prepare_input(const Image& img, const ModelConfig& config) {
  if (img.channels() != 3) throw ShapeError("expected a 3-channel image, got " + img.shape_string());
  const std::size_t s = config.input_resolution;
  if (img.height() == s && img.width() == s) return img;
  return clip01(resize_bicubic(img, s, s));
}

struct EpochLog {
  Stage stage = Stage::ckdn;
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;
  double lr = 0;
  double loss = 0, loss_absolute = 0, loss_fr = 0, loss_distill = 0;
  std::optional<EvalResult> dr, fr;
  double seconds = 0;
};

inline constexpr const char* kMetricsColumns =
    "stage\tepoch\tstep\tlr\ttrain_loss\tloss_absolute\tloss_fr_absolute\tloss_distill\t"
    "val_dr_srcc\tval_dr_plcc\tval_dr_acc\tval_fr_srcc\tval_fr_plcc\tval_fr_acc\tseconds";

struct TrainOptions {
  /// Where config.json, metrics.tsv and checkpoints go; empty = nowhere.
  std::filesystem::path output_dir;
  /// Progress lines (one per epoch); null = silent.
  std::ostream* progress = nullptr;
  /// Truncate metrics.tsv when starting fresh.
  bool fresh_log = true;
  /// Return after this many epochs of the current call (0 = run to the end).
  /// The checkpoint is left resumable.
  std::size_t stop_after_epochs = 0;
};

struct StageResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

namespace detail {

inline std::mt19937_64 epoch_rng(std::uint64_t seed, Stage stage, std::size_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stage == Stage::pretrained_qse ? 1 : 2),
                    static_cast<std::uint32_t>(epoch)};
  return std::mt19937_64(seq);
}

inline std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

/// Random crop window and flip shared by all images of one sample.
struct Augment {
  std::size_t y = 0, x = 0, size = 0;
  bool flip = false;

  static Augment draw(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t crop, bool allow_flip) {
    Augment a;
    if (crop != 0 && crop < std::min(h, w)) {
      a.size = crop;
      a.y = static_cast<std::size_t>(rng() % (h - crop + 1));
      a.x = static_cast<std::size_t>(rng() % (w - crop + 1));
    }
    a.flip = allow_flip && (rng() & 1u);
    return a;
  }

  Image apply(const Image& img) const {
    Image out = size ? crop(img, y, x, size, size) : img;
    return flip ? flip_horizontal(out) : out;
  }
};

class MetricsLog {
 public:
  MetricsLog(const std::filesystem::path& dir, bool truncate, const std::string& header_comment) {
    if (dir.empty()) return;
    std::filesystem::create_directories(dir);
    path_ = dir / "metrics.tsv";
    const bool fresh = truncate || !std::filesystem::exists(path_) || std::filesystem::file_size(path_) == 0;
    std::ofstream out(path_, fresh ? std::ios::trunc : std::ios::app);
    if (!out) throw DataError("cannot write " + path_.string());
    if (fresh) out << kMetricsColumns << '\n';
    out << "# " << header_comment << '\n';
  }

  void append(const EpochLog& e) {
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::app);
    auto opt = [&](const std::optional<EvalResult>& r, double EvalResult::*field) {
      if (r) out << std::setprecision(8) << (*r).*field;
      else out << "NA";
    };
    out << to_string(e.stage) << '\t' << e.epoch << '\t' << e.step << '\t' << std::setprecision(8) << e.lr << '\t'
        << e.loss << '\t' << e.loss_absolute << '\t' << e.loss_fr << '\t' << e.loss_distill << '\t';
    opt(e.dr, &EvalResult::srcc), out << '\t', opt(e.dr, &EvalResult::plcc), out << '\t';
    opt(e.dr, &EvalResult::accuracy), out << '\t';
    opt(e.fr, &EvalResult::srcc), out << '\t', opt(e.fr, &EvalResult::plcc), out << '\t';
    opt(e.fr, &EvalResult::accuracy), out << '\t';
    out << std::setprecision(4) << e.seconds << '\n';
  }

 private:
  std::filesystem::path path_;
};

inline void write_config_snapshot(const std::filesystem::path& dir, const RunConfig& rc, const Dataset& ds) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  json j = {{"toolkit_version", std::string(kToolkitVersion)},
            {"config_hash", rc.hash()},
            {"variant", ablation_label(rc.train)},
            {"dataset_index_hash", ds.index_hash()},
            {"config", rc}};
  write_text(dir / "config.json", j.dump(2) + "\n");
}

inline void clip_gradients(CKDNGrads<float>& g, double max_norm) {
  if (max_norm <= 0) return;
  const double norm = global_norm<float>({&g.dte, &g.dte_teacher, &g.qse, &g.csp});
  if (norm > max_norm) g.scale(static_cast<float>(max_norm / norm));
}

inline void check_finite_loss(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string(what) + ": loss became non-finite (try a lower base_lr)");
}

inline std::size_t warmup_steps(const TrainConfig& t, std::size_t steps_per_epoch) {
  return static_cast<std::size_t>(std::llround(t.warmup_epochs * static_cast<double>(steps_per_epoch)));
}

inline void progress_line(std::ostream* os, const EpochLog& e, std::size_t total_epochs) {
  if (!os) return;
  *os << "[" << to_string(e.stage) << "] epoch " << e.epoch << "/" << total_epochs << " loss " << std::setprecision(5)
      << e.loss;
  if (e.dr) *os << "  dr srcc " << e.dr->srcc;
  if (e.fr) *os << "  fr srcc " << e.fr->srcc;
  *os << "  (" << std::setprecision(3) << e.seconds << " s)\n";
  os->flush();
}

/// Applies one optimizer update to a parameter group.
inline void update_group(Checkpoint& ck, ParamGroupId g, const CKDNGrads<float>& grads, const TrainConfig& tc,
                         double lr) {
  std::vector<float>& p = group(ck.params, g);
  std::vector<float>& m = group(ck.momentum, g);
  const std::vector<float>& d = group(grads, g);
  if (tc.optimizer == OptimizerKind::sgd) {
    sgd_momentum_step(p, m, d, lr, tc.momentum);
    return;
  }
  std::vector<float>& v = group(ck.second_moment, g);
  if (v.size() != p.size()) v.assign(p.size(), 0.0f);
  adam_step(p, m, v, d, lr, tc.momentum, tc.adam_beta2, tc.adam_eps, ck.step + 1);
}

}  // namespace detail

/// Stage 1: fits the quality embedding and score predictor. The reference
/// embeddings keep their initial values.
inline StageResult pretrain_qse(const RunConfig& rc, const Dataset& ds, const TrainOptions& opts = {},
                                const Checkpoint* resume = nullptr) {
  rc.validate();
  const TrainConfig& tc = rc.train;
  if (tc.pretrain_loss == PretrainLoss::none) throw ConfigError("pretrain_qse: pretrain_loss is none");
  const ModelConfig mc = rc.effective_model();
  const CKDNModel model(mc);
  const LossWeights lw = rc.effective_loss();
  const auto train_idx = ds.split_indices(Split::train);
  if (train_idx.empty()) throw DataError("pretrain_qse: training split is empty");
  const bool relative = tc.pretrain_loss == PretrainLoss::relative;
  if (relative && pair_cells(ds, Split::train).empty()) {
    throw DataError("pretrain_qse: no (content, degradation) cell with two or more training restorations");
  }
  const MosScale& ms = ds.manifest().mos_scale;

  Checkpoint ck;
  if (resume) {
    if (resume->stage != Stage::pretrained_qse) throw ConfigError("resume: checkpoint is not a stage-1 checkpoint");
    if (resume->config_hash != rc.hash()) throw ConfigError("resume: config hash mismatch");
    ck = *resume;
  } else {
    ck.stage = Stage::pretrained_qse;
    ck.params = model.initialize<float>(tc.seed);
    ck.momentum = CKDNGrads<float>::zeros_like(ck.params);
    ck.config_hash = rc.hash();
  }
  ck.extra["dataset_index_hash"] = ds.index_hash();
  ck.extra["variant"] = ablation_label(tc);
  model.check_params(ck.params);

  const std::size_t per_epoch = tc.pairs_per_epoch ? tc.pairs_per_epoch
                                : tc.samples_per_epoch ? tc.samples_per_epoch
                                                       : train_idx.size();
  const std::size_t steps_per_epoch = (per_epoch + tc.batch_size - 1) / tc.batch_size;
  const WarmupSchedule sched{tc.base_lr, detail::warmup_steps(tc, steps_per_epoch)};
  detail::write_config_snapshot(opts.output_dir, rc, ds);
  detail::MetricsLog log(opts.output_dir, opts.fresh_log && !resume,
                         "config_hash=" + rc.hash() + " toolkit_version=" + std::string(kToolkitVersion) + " stage=pretrained-qse" +
                             " pretrain_loss=" + to_string(tc.pretrain_loss) + " variant=" + ablation_label(tc));
  StageResult result;

  const std::size_t end1 =
      opts.stop_after_epochs ? std::min(tc.stage1_epochs, ck.epoch + opts.stop_after_epochs) : tc.stage1_epochs;
  for (std::size_t epoch = ck.epoch; epoch < end1; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    auto rng = detail::epoch_rng(tc.seed, Stage::pretrained_qse, epoch);
    double loss_sum = 0;
    std::size_t seen = 0;
    double lr = 0;
    if (relative) {
      const auto pairs = sample_pairs(ds, Split::train, per_epoch, rng());
      for (std::size_t b = 0; b < pairs.size(); b += tc.batch_size) {
        PairBatch<float> pb;
        for (std::size_t k = b; k < std::min(pairs.size(), b + tc.batch_size); ++k) {
          const auto& ri = ds.record(pairs[k].first);
          const auto& rj = ds.record(pairs[k].second);
          const Image& ii = ds.image(ri.restored);
          const auto aug = detail::Augment::draw(rng, ii.height(), ii.width(), tc.crop_size, tc.flip);
          pb.restored_i.push_back(aug.apply(ii));
          pb.restored_j.push_back(aug.apply(ds.image(rj.restored)));
          pb.mos_i.push_back(static_cast<float>(ri.mos));
          pb.mos_j.push_back(static_cast<float>(rj.mos));
        }
        auto grads = CKDNGrads<float>::zeros_like(ck.params);
        const double l = relative_loss(model, ck.params, pb, lw, &grads);
        detail::check_finite_loss(l, "pretrain_qse");
        detail::clip_gradients(grads, tc.grad_clip_norm);
        lr = sched.lr(ck.step);
        detail::update_group(ck, ParamGroupId::qse, grads, tc, lr);
        detail::update_group(ck, ParamGroupId::csp, grads, tc, lr);
        ++ck.step;
        loss_sum += l * static_cast<double>(pb.size());
        seen += pb.size();
      }
    } else {
      std::vector<std::size_t> order(per_epoch);
      const auto perm = detail::permutation(train_idx.size(), rng());
      for (std::size_t k = 0; k < per_epoch; ++k) order[k] = train_idx[perm[k % perm.size()]];
      for (std::size_t b = 0; b < order.size(); b += tc.batch_size) {
        Batch<float> batch;
        for (std::size_t k = b; k < std::min(order.size(), b + tc.batch_size); ++k) {
          const auto& r = ds.record(order[k]);
          const Image& h = ds.image(r.pristine);
          const auto aug = detail::Augment::draw(rng, h.height(), h.width(), tc.crop_size, tc.flip);
          batch.pristine.push_back(aug.apply(h));
          batch.degraded.push_back(aug.apply(ds.image(r.degraded)));
          batch.restored.push_back(aug.apply(ds.image(r.restored)));
          batch.mos.push_back(static_cast<float>((r.mos - ms.mu) / ms.M));
        }
        auto grads = CKDNGrads<float>::zeros_like(ck.params);
        const double l = absolute_loss(model, ck.params, batch, &grads);
        detail::check_finite_loss(l, "pretrain_qse");
        // The reference embedding stays at its initialization in stage 1.
        std::fill(grads.dte.begin(), grads.dte.end(), 0.0f);
        detail::clip_gradients(grads, tc.grad_clip_norm);
        lr = sched.lr(ck.step);
        detail::update_group(ck, ParamGroupId::qse, grads, tc, lr);
        detail::update_group(ck, ParamGroupId::csp, grads, tc, lr);
        ++ck.step;
        loss_sum += l * static_cast<double>(batch.size());
        seen += batch.size();
      }
    }
    ck.epoch = epoch + 1;
    EpochLog e;
    e.stage = Stage::pretrained_qse;
    e.epoch = ck.epoch;
    e.step = ck.step;
    e.lr = lr;
    e.loss = loss_sum / static_cast<double>(seen);
    if (!relative) e.loss_absolute = e.loss;
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ck.rng_state = detail::rng_state(detail::epoch_rng(tc.seed, Stage::pretrained_qse, ck.epoch));
    ck.metrics["train_loss"] = e.loss;
    ck.metrics["epoch"] = ck.epoch;
    if (!ck.metrics.contains("first_epoch_loss")) ck.metrics["first_epoch_loss"] = e.loss;
    log.append(e);
    detail::progress_line(opts.progress, e, tc.stage1_epochs);
    result.log.push_back(e);
    if (!opts.output_dir.empty()) save_checkpoint(opts.output_dir / "pretrain_latest.ckpt", ck);
  }
  result.checkpoint = ck;
  return result;
}

/// Stage 2: the full network. With use_ckd the objective is
/// L_a + L_a^H + lambda * distillation over all four groups; without it,
/// L_a alone. `init` must be a stage-1 checkpoint when use_pretrain is set.
inline StageResult train_ckdn(const RunConfig& rc, const Dataset& ds, const Checkpoint* init,
                              const TrainOptions& opts = {}, const Checkpoint* resume = nullptr) {
  rc.validate();
  const TrainConfig& tc = rc.train;
  const ModelConfig mc = rc.effective_model();
  const CKDNModel model(mc);
  const LossWeights lw = rc.effective_loss();
  const auto train_idx = ds.split_indices(Split::train);
  if (train_idx.empty()) throw DataError("train_ckdn: training split is empty");
  const bool have_val = !ds.split_indices(Split::val).empty();
  const MosScale& ms = ds.manifest().mos_scale;

  Checkpoint ck;
  if (resume) {
    if (resume->stage != Stage::ckdn) throw ConfigError("resume: checkpoint is not a stage-2 checkpoint");
    if (resume->config_hash != rc.hash()) throw ConfigError("resume: config hash mismatch");
    ck = *resume;
  } else {
    ck.stage = Stage::ckdn;
    ck.config_hash = rc.hash();
    if (tc.use_pretrain) {
      if (!init) throw ConfigError("train_ckdn: use_pretrain is set but no stage-1 checkpoint was given");
      if (init->stage != Stage::pretrained_qse) throw ConfigError("train_ckdn: init checkpoint is not a stage-1 checkpoint");
      if (architecture_hash(init->params.config) != architecture_hash(mc)) {
        throw ConfigError("train_ckdn: init checkpoint config hash is incompatible with this model");
      }
      ck.params = init->params;
      ck.params.config = mc;
    } else {
      ck.params = model.initialize<float>(tc.seed);
    }
    ck.momentum = CKDNGrads<float>::zeros_like(ck.params);
  }
  ck.extra["dataset_index_hash"] = ds.index_hash();
  ck.extra["variant"] = ablation_label(tc);
  model.check_params(ck.params);

  const std::size_t per_epoch = tc.samples_per_epoch ? tc.samples_per_epoch : train_idx.size();
  const std::size_t steps_per_epoch = (per_epoch + tc.batch_size - 1) / tc.batch_size;
  const WarmupSchedule sched{tc.base_lr, detail::warmup_steps(tc, steps_per_epoch)};
  detail::write_config_snapshot(opts.output_dir, rc, ds);
  detail::MetricsLog log(opts.output_dir, opts.fresh_log && !resume,
                         "config_hash=" + rc.hash() + " toolkit_version=" + std::string(kToolkitVersion) + " stage=ckdn" +
                             " use_ckd=" + (tc.use_ckd ? "1" : "0") + " use_pretrain=" + (tc.use_pretrain ? "1" : "0") +
                             " shared_embeddings=" + (tc.shared_embeddings ? "1" : "0") +
                             " variant=" + ablation_label(tc));
  const detail::TermWeights terms{1.0, tc.use_ckd ? 1.0 : 0.0, tc.use_ckd ? lw.lambda : 0.0, lw.teacher_stop_gradient};
  double best = ck.metrics.value("best_val_dr_srcc", -2.0);
  StageResult result;

  const std::size_t end2 =
      opts.stop_after_epochs ? std::min(tc.stage2_epochs, ck.epoch + opts.stop_after_epochs) : tc.stage2_epochs;
  for (std::size_t epoch = ck.epoch; epoch < end2; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    auto rng = detail::epoch_rng(tc.seed, Stage::ckdn, epoch);
    std::vector<std::size_t> order(per_epoch);
    const auto perm = detail::permutation(train_idx.size(), rng());
    for (std::size_t k = 0; k < per_epoch; ++k) order[k] = train_idx[perm[k % perm.size()]];
    LossBreakdown<double> sums;
    std::size_t seen = 0;
    double lr = 0;
    for (std::size_t b = 0; b < order.size(); b += tc.batch_size) {
      Batch<float> batch;
      for (std::size_t k = b; k < std::min(order.size(), b + tc.batch_size); ++k) {
        const auto& r = ds.record(order[k]);
        const Image& h = ds.image(r.pristine);
        const auto aug = detail::Augment::draw(rng, h.height(), h.width(), tc.crop_size, tc.flip);
        batch.pristine.push_back(aug.apply(h));
        batch.degraded.push_back(aug.apply(ds.image(r.degraded)));
        batch.restored.push_back(aug.apply(ds.image(r.restored)));
        batch.mos.push_back(static_cast<float>((r.mos - ms.mu) / ms.M));
      }
      auto grads = CKDNGrads<float>::zeros_like(ck.params);
      const auto l = detail::combined_loss(model, ck.params, batch, terms, &grads);
      detail::check_finite_loss(l.total, "train_ckdn");
      detail::clip_gradients(grads, tc.grad_clip_norm);
      lr = sched.lr(ck.step);
      if (!tc.shared_embeddings) detail::update_group(ck, ParamGroupId::dte, grads, tc, lr);
      if (tc.use_ckd) detail::update_group(ck, ParamGroupId::dte_teacher, grads, tc, lr);
      detail::update_group(ck, ParamGroupId::qse, grads, tc, lr);
      detail::update_group(ck, ParamGroupId::csp, grads, tc, lr);
      ++ck.step;
      const double n = static_cast<double>(batch.size());
      sums.total += l.total * n;
      sums.absolute += l.absolute * n;
      sums.fr_absolute += l.fr_absolute * n;
      sums.distillation += l.distillation * n;
      seen += batch.size();
    }
    ck.epoch = epoch + 1;
    EpochLog e;
    e.stage = Stage::ckdn;
    e.epoch = ck.epoch;
    e.step = ck.step;
    e.lr = lr;
    const double inv = 1.0 / static_cast<double>(seen);
    e.loss = sums.total * inv;
    e.loss_absolute = sums.absolute * inv;
    e.loss_fr = sums.fr_absolute * inv;
    e.loss_distill = sums.distillation * inv;
    const bool eval_now = have_val && (ck.epoch % tc.eval_every == 0 || ck.epoch == tc.stage2_epochs);
    if (eval_now) {
      e.dr = evaluate(model, ck.params, ds, Split::val, EvalMode::dr);
      e.fr = evaluate(model, ck.params, ds, Split::val, EvalMode::fr);
    }
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ck.rng_state = detail::rng_state(detail::epoch_rng(tc.seed, Stage::ckdn, ck.epoch));
    ck.metrics["train_loss"] = e.loss;
    ck.metrics["epoch"] = ck.epoch;
    if (e.dr) {
      ck.metrics["val_dr_srcc"] = e.dr->srcc;
      ck.metrics["val_dr_plcc"] = e.dr->plcc;
      ck.metrics["val_fr_srcc"] = e.fr->srcc;
      ck.metrics["val_fr_plcc"] = e.fr->plcc;
    }
    const bool improved = e.dr && e.dr->srcc > best;
    if (improved) {
      best = e.dr->srcc;
      ck.metrics["best_val_dr_srcc"] = best;
      ck.metrics["best_epoch"] = ck.epoch;
    }
    log.append(e);
    detail::progress_line(opts.progress, e, tc.stage2_epochs);
    result.log.push_back(e);
    if (!opts.output_dir.empty()) {
      save_checkpoint(opts.output_dir / "ckdn_latest.ckpt", ck);
      if (improved) save_checkpoint(opts.output_dir / "ckdn_best.ckpt", ck);
    }
  }
  result.checkpoint = ck;
  return result;
}

}  // namespace ckdn
