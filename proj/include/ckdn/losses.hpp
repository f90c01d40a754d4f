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

// Training objectives. Every loss optionally accumulates the gradient of
// its returned value into a CKDNGrads buffer. All squared-norm terms are
// means: over the batch, and for the distillation term also over feature
// elements.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ckdn/error.hpp"
#include "ckdn/model.hpp"

namespace ckdn {

template <class T>
struct Batch {
  std::vector<ImageTensor<T>> pristine;
  std::vector<ImageTensor<T>> degraded;
  std::vector<ImageTensor<T>> restored;
  std::vector<T> mos;

  std::size_t size() const { return mos.size(); }

  void validate() const {
    if (mos.empty()) throw DataError("batch is empty");
    if (pristine.size() != mos.size() || degraded.size() != mos.size() || restored.size() != mos.size()) {
      throw DataError("batch lists have unequal lengths");
    }
    for (T s : mos)
      if (!std::isfinite(s)) throw NumericError("batch contains a non-finite score");
  }
};

/// Pairs of restorations of the same content.
template <class T>
struct PairBatch {
  std::vector<ImageTensor<T>> restored_i, restored_j;
  std::vector<T> mos_i, mos_j;

  std::size_t size() const { return mos_i.size(); }

  void validate() const {
    if (mos_i.empty()) throw DataError("pair batch is empty");
    if (mos_j.size() != mos_i.size() || restored_i.size() != mos_i.size() || restored_j.size() != mos_i.size()) {
      throw DataError("pair batch lists have unequal lengths");
    }
  }
};

struct LossWeights {
  double lambda = 10.0;
  double elo_M = 400.0;
  /// Detach teacher features inside the distillation term.
  bool teacher_stop_gradient = false;
  /// Squash the relative-loss prediction through a logistic before the MSE.
  bool sigmoid_head = false;

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a finite value >= 0");
    if (!(elo_M > 0.0) || !std::isfinite(elo_M)) throw ConfigError("elo M must be a finite value > 0");
  }
};

/// Probability that s_i beats s_j under the Elo model with scale M.
template <class T>
T elo_probability(T s_i, T s_j, T M) {
  if (!(M > T(0))) throw ConfigError("elo_probability: M must be positive");
  return T(1) / (T(1) + std::pow(T(10), (s_j - s_i) / M));
}

/// Per-term values of the conditional distillation objective.
template <class T>
struct LossBreakdown {
  T total = 0;
  T absolute = 0;
  T fr_absolute = 0;
  T distillation = 0;
};

namespace detail {

struct TermWeights {
  double absolute = 0, fr_absolute = 0, distillation = 0;
  bool teacher_stop_gradient = false;
};

/// Evaluates w_a * L_a + w_fr * L_a^H + w_d * distillation with shared
/// forward passes, accumulating gradients of the weighted total.
template <class T>
LossBreakdown<T> combined_loss(const CKDNModel& model, const CKDNParams<T>& params, const Batch<T>& batch,
                               const TermWeights& w, CKDNGrads<T>* grads) {
  batch.validate();
  model.check_params(params);
  const auto& embed = model.embedding();
  const auto& csp = model.predictor();
  const T n = static_cast<T>(batch.size());
  const bool need_student = w.absolute != 0 || w.distillation != 0;
  const bool need_teacher = w.fr_absolute != 0 || w.distillation != 0;
  const bool need_quality = w.absolute != 0 || w.fr_absolute != 0;
  const std::span<const T> student_p(params.student_reference());

  LossBreakdown<T> out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    detail::check_pair(batch.degraded[i], batch.restored[i], "loss");
    detail::check_pair(batch.pristine[i], batch.restored[i], "loss");
    typename EmbeddingNet::Cache<T> cd, ch, cr;
    FeatureMap<T> fd, fh, fr;
    if (need_student) fd = embed.forward(student_p, batch.degraded[i], cd);
    if (need_teacher) fh = embed.forward(std::span<const T>(params.dte_teacher), batch.pristine[i], ch);
    if (need_quality) fr = embed.forward(std::span<const T>(params.qse), batch.restored[i], cr);

    FeatureMap<T> dfd, dfh, dfr;
    if (grads) {
      if (need_student) dfd = FeatureMap<T>(fd.channels(), fd.height(), fd.width());
      if (need_teacher) dfh = FeatureMap<T>(fh.channels(), fh.height(), fh.width());
      if (need_quality) dfr = FeatureMap<T>(fr.channels(), fr.height(), fr.width());
    }

    if (w.absolute != 0) {
      typename ScorePredictor::Cache<T> cc;
      const T pred = csp.forward(std::span<const T>(params.csp), fd - fr, cc);
      const T r = batch.mos[i] - pred;
      out.absolute += r * r / n;
      if (grads) {
        const T dpred = static_cast<T>(w.absolute) * T(-2) * r / n;
        FeatureMap<T> ddiff = csp.backward(std::span<const T>(params.csp), cc, dpred, std::span<T>(grads->csp));
        dfd += ddiff;
        dfr -= ddiff;
      }
    }
    if (w.fr_absolute != 0) {
      typename ScorePredictor::Cache<T> cc;
      const T pred = csp.forward(std::span<const T>(params.csp), fh - fr, cc);
      const T r = batch.mos[i] - pred;
      out.fr_absolute += r * r / n;
      if (grads) {
        const T dpred = static_cast<T>(w.fr_absolute) * T(-2) * r / n;
        FeatureMap<T> ddiff = csp.backward(std::span<const T>(params.csp), cc, dpred, std::span<T>(grads->csp));
        dfh += ddiff;
        dfr -= ddiff;
      }
    }
    if (w.distillation != 0) {
      detail::require(fh.same_shape(fd), "distillation: feature shapes differ");
      const T m = static_cast<T>(fd.size());
      T acc = 0;
      for (std::size_t k = 0; k < fd.size(); ++k) {
        const T d = fh[k] - fd[k];
        acc += d * d;
      }
      out.distillation += acc / (m * n);
      if (grads) {
        const T scale = static_cast<T>(w.distillation) * T(2) / (m * n);
        for (std::size_t k = 0; k < fd.size(); ++k) {
          const T g = scale * (fh[k] - fd[k]);
          if (!w.teacher_stop_gradient) dfh[k] += g;
          dfd[k] -= g;
        }
      }
    }

    if (grads) {
      if (need_student) {
        embed.backward(student_p, cd, dfd, std::span<T>(grads->student_reference(params.config)));
      }
      if (need_teacher && (w.fr_absolute != 0 || !w.teacher_stop_gradient)) {
        embed.backward(std::span<const T>(params.dte_teacher), ch, dfh, std::span<T>(grads->dte_teacher));
      }
      if (need_quality) embed.backward(std::span<const T>(params.qse), cr, dfr, std::span<T>(grads->qse));
    }
  }
  out.total = static_cast<T>(w.absolute) * out.absolute + static_cast<T>(w.fr_absolute) * out.fr_absolute +
              static_cast<T>(w.distillation) * out.distillation;
  return out;
}

}  // namespace detail

/// Degraded-reference score regression: mean_i (s_i - S(E1(D_i) - E2(R_i)))^2.
template <class T>
T absolute_loss(const CKDNModel& model, const CKDNParams<T>& params, const Batch<T>& batch,
                CKDNGrads<T>* grads = nullptr) {
  return detail::combined_loss(model, params, batch, {1, 0, 0}, grads).total;
}

/// Full-reference score regression through the teacher embedding and the
/// shared quality embedding / predictor.
template <class T>
T fr_absolute_loss(const CKDNModel& model, const CKDNParams<T>& params, const Batch<T>& batch,
                   CKDNGrads<T>* grads = nullptr) {
  return detail::combined_loss(model, params, batch, {0, 1, 0}, grads).total;
}

/// mean_i mean_k (E1H(H_i) - E1(D_i))_k^2.
template <class T>
T distillation_term(const CKDNModel& model, const CKDNParams<T>& params, const Batch<T>& batch,
                    CKDNGrads<T>* grads = nullptr, bool teacher_stop_gradient = false) {
  return detail::combined_loss(model, params, batch, {0, 0, 1, teacher_stop_gradient}, grads).total;
}

/// Conditional distillation objective L_a + L_a^H + lambda * distillation.
template <class T>
LossBreakdown<T> ckd_loss(const CKDNModel& model, const CKDNParams<T>& params, const Batch<T>& batch,
                          const LossWeights& w, CKDNGrads<T>* grads = nullptr) {
  w.validate();
  return detail::combined_loss(model, params, batch, {1, 1, w.lambda, w.teacher_stop_gradient}, grads);
}

/// Relative score regression over restoration pairs:
/// mean_p (Pr(s_i > s_j) - S(E2(R_i) - E2(R_j)))^2. Touches only E2 and S.
template <class T>
T relative_loss(const CKDNModel& model, const CKDNParams<T>& params, const PairBatch<T>& pairs,
                const LossWeights& w, CKDNGrads<T>* grads = nullptr) {
  w.validate();
  pairs.validate();
  model.check_params(params);
  const auto& embed = model.embedding();
  const auto& csp = model.predictor();
  const std::span<const T> qse(params.qse), sp(params.csp);
  const T n = static_cast<T>(pairs.size());
  T loss = 0;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    detail::check_pair(pairs.restored_i[p], pairs.restored_j[p], "relative_loss");
    typename EmbeddingNet::Cache<T> ci, cj;
    typename ScorePredictor::Cache<T> cc;
    const FeatureMap<T> fi = embed.forward(qse, pairs.restored_i[p], ci);
    const FeatureMap<T> fj = embed.forward(qse, pairs.restored_j[p], cj);
    const T raw = csp.forward(sp, fi - fj, cc);
    T pred = raw;
    if (w.sigmoid_head) pred = T(1) / (T(1) + std::exp(-raw));
    const T target = elo_probability<T>(pairs.mos_i[p], pairs.mos_j[p], static_cast<T>(w.elo_M));
    const T r = target - pred;
    loss += r * r / n;
    if (grads) {
      T dpred = T(-2) * r / n;
      if (w.sigmoid_head) dpred *= pred * (T(1) - pred);
      const FeatureMap<T> ddiff = csp.backward(sp, cc, dpred, std::span<T>(grads->csp));
      embed.backward(qse, ci, ddiff, std::span<T>(grads->qse));
      embed.backward(qse, cj, T(-1) * ddiff, std::span<T>(grads->qse));
    }
  }
  return loss;
}

}  // namespace ckdn
