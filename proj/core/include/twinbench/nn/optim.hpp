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

#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "twinbench/nn/layers.hpp"

namespace twinbench::nn {

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamWConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  double clip_norm = 1.0;
};

struct StepReport {
  double grad_norm = 0.0;   // global norm before clipping
  double clip_scale = 1.0;  // factor applied to every gradient
};

// Adaptive-moment optimizer with decoupled weight decay and global-norm
// clipping. Gradients are consumed and zeroed by step().
class AdamW {
 public:
  AdamW() = default;
  AdamW(ParamList params, AdamWConfig config);

  StepReport step();
  void zero_grad() const { zero_grads(params_); }

  double learning_rate() const { return config_.learning_rate; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  std::size_t step_count() const { return steps_; }
  const ParamList& params() const { return params_; }
  const AdamWConfig& config() const { return config_; }

 private:
  ParamList params_;
  AdamWConfig config_;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
  std::size_t steps_ = 0;
};

// Multiplies the optimizer learning rate by `factor` after `patience`
// validation evaluations without improvement.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor = 0.5, std::size_t patience = 2, double min_lr = 1e-6)
      : factor_(factor), patience_(patience), min_lr_(min_lr) {}

  // Returns true when the learning rate was reduced.
  bool observe(double validation_loss, AdamW& optimizer);

 private:
  double factor_;
  std::size_t patience_;
  double min_lr_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_ = 0;
};

}  // namespace twinbench::nn
