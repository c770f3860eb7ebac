// Copyright 2026 The Twinbench Authors.
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

#include "twinbench/online/ema.hpp"

#include <stdexcept>

namespace twinbench::online {

EmaShadow::EmaShadow(const nn::ParamList& params, double alpha) : alpha_(alpha), shadow_(nn::snapshot_values(params)) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw std::invalid_argument("EmaShadow: alpha must be in [0,1)");
}

void EmaShadow::check(const nn::ParamList& params) const {
  if (params.size() != shadow_.size()) throw std::invalid_argument("EmaShadow: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].var.value().same_shape(shadow_[i])) {
      throw std::invalid_argument("EmaShadow: shape mismatch for " + params[i].name);
    }
  }
}

void EmaShadow::update(const nn::ParamList& params) {
  check(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const nn::Tensor& p = params[i].var.value();
    nn::Tensor& s = shadow_[i];
    for (std::size_t j = 0; j < s.size(); ++j) s[j] = alpha_ * s[j] + (1.0 - alpha_) * p[j];
  }
}

void EmaShadow::copy_to(const nn::ParamList& params) const {
  check(params);
  nn::restore_values(params, shadow_);
}

}  // namespace twinbench::online
