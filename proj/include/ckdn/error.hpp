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

#include <stdexcept>
#include <string>

namespace ckdn {

/// Base of every error thrown by the toolkit. The CLI maps the concrete
/// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration, manifest, flag combination or checkpoint mismatch.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing or malformed input data (images, corpora, dataset indices).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Tensor or image dimensions incompatible with an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, undefined statistics (e.g. zero-variance correlation).
class NumericError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <class E = ShapeError>
inline void require(bool cond, const std::string& what) {
  if (!cond) throw E(what);
}

}  // namespace detail
}  // namespace ckdn
