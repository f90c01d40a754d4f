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
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ckdn/error.hpp"

namespace ckdn::metrics {

/// 1-based ranks; tied values share the mean of the positions they occupy.
inline std::vector<double> average_ranks(std::span<const double> v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

namespace detail {

inline void check_lists(std::span<const double> a, std::span<const double> b, const char* who) {
  if (a.size() != b.size()) throw DataError(std::string(who) + ": lists have different lengths");
  if (a.size() < 2) throw DataError(std::string(who) + ": need at least two observations");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw NumericError(std::string(who) + ": non-finite value");
  }
}

}  // namespace detail

/// Pearson linear correlation coefficient.
inline double plcc(std::span<const double> predicted, std::span<const double> target) {
  detail::check_lists(predicted, target, "plcc");
  const double n = static_cast<double>(predicted.size());
  const double mx = std::accumulate(predicted.begin(), predicted.end(), 0.0) / n;
  const double my = std::accumulate(target.begin(), target.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double dx = predicted[i] - mx, dy = target[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw NumericError("plcc: zero variance, correlation undefined");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Spearman rank correlation: Pearson correlation of average ranks.
inline double srcc(std::span<const double> predicted, std::span<const double> target) {
  detail::check_lists(predicted, target, "srcc");
  const auto rp = average_ranks(predicted);
  const auto rt = average_ranks(target);
  try {
    return plcc(rp, rt);
  } catch (const NumericError&) {
    throw NumericError("srcc: constant list, correlation undefined");
  }
}

/// Fraction of index pairs whose predicted ordering matches the target
/// ordering. Target ties are skipped; prediction ties count as wrong.
inline double pairwise_accuracy(std::span<const double> predicted, std::span<const double> target,
                                std::span<const std::pair<std::size_t, std::size_t>> pair_index) {
  if (predicted.size() != target.size()) throw DataError("pairwise_accuracy: lists have different lengths");
  std::size_t right = 0, total = 0;
  for (const auto& [i, j] : pair_index) {
    if (i >= target.size() || j >= target.size()) throw DataError("pairwise_accuracy: pair index out of range");
    const double dt = target[i] - target[j];
    if (dt == 0.0) continue;
    ++total;
    const double dp = predicted[i] - predicted[j];
    if ((dp > 0 && dt > 0) || (dp < 0 && dt < 0)) ++right;
  }
  if (total == 0) throw DataError("pairwise_accuracy: no pairs with distinct targets");
  return static_cast<double>(right) / static_cast<double>(total);
}

}  // namespace ckdn::metrics
