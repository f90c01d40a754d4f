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

#include "ckdn/checkpoint.hpp"
#include "ckdn/config.hpp"
#include "ckdn/corpus.hpp"
#include "ckdn/dataset.hpp"
#include "ckdn/degradation.hpp"
#include "ckdn/error.hpp"
#include "ckdn/hash.hpp"
#include "ckdn/image.hpp"
#include "ckdn/layers.hpp"
#include "ckdn/losses.hpp"
#include "ckdn/metrics.hpp"
#include "ckdn/model.hpp"
#include "ckdn/optim.hpp"
#include "ckdn/restoration.hpp"
#include "ckdn/tensor.hpp"
#include "ckdn/training.hpp"
