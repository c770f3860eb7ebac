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

#include <cstdint>
#include <functional>
#include <vector>

#include "twinbench/nn/optim.hpp"
#include "twinbench/twin/dynamics.hpp"

namespace twinbench::twin {

using Episode = std::vector<Transition>;

struct TrainConfig {
  DynamicsConfig model;
  std::size_t max_epochs = 30;
  std::size_t batch_size = 16;
  std::size_t patience = 5;
  double learning_rate = 3e-4;
  // Zero keeps every batch; otherwise caps optimizer steps per epoch.
  std::size_t max_steps_per_epoch = 0;
};

struct TrainResult {
  double best_validation_loss = 0.0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::vector<double> train_loss;
  std::vector<double> validation_loss;
};

// Masked Smooth-L1 of the bounded one-step prediction over a set of episodes.
double sequence_loss(const DynamicsModel& model, const std::vector<const Episode*>& episodes,
                     std::size_t batch_size = 64);

DynamicsModel train_dynamics(const std::vector<Episode>& train, const std::vector<Episode>& validation,
                             std::uint64_t seed, const TrainConfig& config, TrainResult* result = nullptr);

TwinEnsemble train_ensemble(const std::vector<Episode>& train, const std::vector<Episode>& validation,
                            const TrainConfig& config, std::vector<TrainResult>* results = nullptr);

// Teacher-forced one-step predictions of every transition, in episode order.
std::vector<State> one_step_predictions(const DynamicsModel& model, const std::vector<Episode>& episodes);
std::vector<State> one_step_predictions(const TwinEnsemble& ens, const std::vector<Episode>& episodes);

// Open-loop error: history is observed up to t0, then the model feeds back its own predictions
// under the logged actions. Returns MSE at horizons 1..max_h (index h-1).
std::vector<double> multi_step_mse(const TwinEnsemble& ens, const std::vector<Episode>& episodes, std::size_t max_h,
                                   const std::vector<std::size_t>& starts = {0, 5, 10, 20, 30});

}  // namespace twinbench::twin
