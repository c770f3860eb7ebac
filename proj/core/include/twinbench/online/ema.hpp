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

#pragma once

#include <vector>

#include "twinbench/nn/layers.hpp"

namespace twinbench::online {

inline constexpr double kEmaRate = 0.99;

// Shadow copies of trainable parameters: shadow <- alpha * shadow + (1 - alpha) * param.
class EmaShadow {
 public:
  EmaShadow() = default;
  explicit EmaShadow(const nn::ParamList& params, double alpha = kEmaRate);

  void update(const nn::ParamList& params);
  const std::vector<nn::Tensor>& values() const { return shadow_; }
  std::vector<nn::Tensor>& values() { return shadow_; }
  double alpha() const { return alpha_; }
  // Writes the shadow values into `params`.
  void copy_to(const nn::ParamList& params) const;

 private:
  void check(const nn::ParamList& params) const;

  double alpha_ = kEmaRate;
  std::vector<nn::Tensor> shadow_;
};

}  // namespace twinbench::online
