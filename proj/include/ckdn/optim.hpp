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
#include <vector>

#include "ckdn/error.hpp"

namespace ckdn {

/// Linear warm-up from 0 to `base_lr` over `warmup_steps`, then constant.
/// lr(0) == 0; lr(step >= warmup_steps) == base_lr exactly.
struct WarmupSchedule {
  double base_lr = 0.15;
  std::size_t warmup_steps = 0;

  double lr(std::size_t step) const {
    if (step >= warmup_steps) return base_lr;
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
};

/// Heavy-ball SGD without weight decay: v = mu * v + g; p -= lr * v.
template <class T>
void sgd_momentum_step(std::vector<T>& params, std::vector<T>& velocity, const std::vector<T>& grads, double lr,
                       double momentum) {
  detail::require(params.size() == grads.size() && velocity.size() == params.size(),
                  "sgd: parameter, gradient and velocity sizes differ");
  const T mu = static_cast<T>(momentum), step = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = mu * velocity[i] + grads[i];
    params[i] -= step * velocity[i];
  }
}

/// Adam with bias correction at step t >= 1 (no weight decay).
template <class T>
void adam_step(std::vector<T>& params, std::vector<T>& m, std::vector<T>& v, const std::vector<T>& grads, double lr,
               double beta1, double beta2, double eps, std::size_t t) {
  detail::require(params.size() == grads.size() && m.size() == params.size() && v.size() == params.size(),
                  "adam: parameter, gradient and moment sizes differ");
  detail::require(t >= 1, "adam: step count starts at 1");
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
  const T step = static_cast<T>(lr / c1), inv_c2 = static_cast<T>(1.0 / c2), e = static_cast<T>(eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = b1 * m[i] + (T(1) - b1) * grads[i];
    v[i] = b2 * v[i] + (T(1) - b2) * grads[i] * grads[i];
    params[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + e);
  }
}

/// Euclidean norm over several buffers, accumulated in double.
template <class T>
double global_norm(std::initializer_list<const std::vector<T>*> buffers) {
  double acc = 0;
  for (const auto* b : buffers)
    for (T v : *b) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

}  // namespace ckdn
