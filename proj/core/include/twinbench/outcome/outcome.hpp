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

#include <array>
#include <span>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "twinbench/cohort/types.hpp"
#include "twinbench/nn/layers.hpp"

namespace twinbench::outcome {

struct RewardNormStats {
  double mean = 0.0;
  double stddev = 1.0;
  std::string split_fingerprint;

  static RewardNormStats fit(const std::vector<Transition>& train, const std::string& fingerprint);
  double normalize(double r) const;
  double denormalize(double z) const;

  nlohmann::json to_json() const;
  static RewardNormStats from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static RewardNormStats load(const std::filesystem::path& path);
};

// Fingerprint of a list of patient ids (SHA-256 prefix).
std::string split_fingerprint(const std::vector<int>& patient_ids);

struct OutcomeConfig {
  std::size_t hidden = 64;
  std::size_t z_dim = 32;
  std::size_t action_dim = 8;
  std::size_t disc_hidden = 32;

  nlohmann::json to_json() const;
  static OutcomeConfig from_json(const nlohmann::json& j);
};

class OutcomeModel {
 public:
  OutcomeModel() = default;
  OutcomeModel(const OutcomeConfig& config, std::uint64_t seed, RewardNormStats stats, double lambda);

  // z_health for each state row: [N, 10] -> [N, z_dim]
  nn::Var encode(const nn::Tensor& states) const;
  // Predicted reward in normalized units.
  nn::Var predict_normalized(const nn::Var& z, std::span<const int> actions) const;
  nn::Var discriminator_logits(const nn::Var& z) const;

  // Predicted raw one-step reward r(s, a).
  double predict(const State& s, int action) const;
  std::vector<double> predict_batch(const std::vector<State>& states, const std::vector<int>& actions) const;
  // All five actions for each state.
  std::vector<ActionValues> predict_all(const std::vector<State>& states) const;
  std::vector<std::vector<double>> embed(const std::vector<State>& states) const;

  double treatment_effect(const State& s, int action) const;

  nn::ParamList model_params() const;          // encoder + action embedding + head
  nn::ParamList discriminator_params() const;
  nn::ParamList encoder_params() const;
  // Online updates touch the head and discriminator; the encoder stays frozen.
  nn::ParamList online_params() const;
  nn::ParamList params() const;

  double lambda() const { return lambda_; }
  void set_lambda(double l);
  const RewardNormStats& stats() const { return stats_; }
  const OutcomeConfig& config() const { return config_; }

  void save(const std::filesystem::path& dir) const;
  static OutcomeModel load(const std::filesystem::path& dir);
  OutcomeModel clone() const;

 private:
  OutcomeConfig config_;
  RewardNormStats stats_;
  double lambda_ = 0.1;
  nn::Dense enc1_, enc2_;
  nn::Embedding action_emb_;
  nn::Dense head1_, head2_;
  nn::Dense disc1_, disc2_;
};

struct OutcomeTrainConfig {
  OutcomeConfig model;
  std::size_t epochs = 30;
  std::size_t batch_size = 256;
  double learning_rate = 3e-3;
  bool allow_zero_lambda = false;  // degenerate plain-L1 fit, tests only
};

struct OutcomeTrainResult {
  double lambda = 0.0;
  double best_validation_mae = 0.0;
  std::size_t best_epoch = 0;
  std::vector<double> validation_mae;
};

OutcomeModel train_outcome(const std::vector<Transition>& train, const std::vector<Transition>& validation,
                           const RewardNormStats& stats, double lambda, std::uint64_t seed,
                           const OutcomeTrainConfig& config, OutcomeTrainResult* result = nullptr);

// Trains one model per grid value and keeps the lowest validation MAE.
OutcomeModel select_outcome(const std::vector<Transition>& train, const std::vector<Transition>& validation,
                            const RewardNormStats& stats, const std::vector<double>& grid, std::uint64_t seed,
                            const OutcomeTrainConfig& config, std::vector<OutcomeTrainResult>* results = nullptr);

double mean_absolute_error(const OutcomeModel& model, const std::vector<Transition>& rows);

struct OutcomeEvaluation {
  double r2 = 0.0;
  double mse = 0.0;
  double mae = 0.0;
  double ece = 0.0;
  double mce = 0.0;
  ActionValues per_action_r2{};  // NaN for actions absent from the rows
};

OutcomeEvaluation evaluate_outcome(const OutcomeModel& model, const std::vector<Transition>& rows, int bins = 10);

// Fresh softmax probe trained to predict the logged action from features; returns held-out accuracy.
double probe_accuracy(const std::vector<std::vector<double>>& train_x, const std::vector<int>& train_y,
                      const std::vector<std::vector<double>>& test_x, const std::vector<int>& test_y,
                      std::uint64_t seed, std::size_t epochs = 10);

}  // namespace twinbench::outcome
