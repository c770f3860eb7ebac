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
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

#include "twinbench/cohort/types.hpp"
#include "twinbench/nn/layers.hpp"

namespace twinbench::twin {

inline constexpr double kStepBound = 0.05;
inline constexpr std::size_t kEnsembleSize = 5;

struct DynamicsConfig {
  std::size_t width = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn = 128;
  std::size_t max_time = kHorizon;

  nlohmann::json to_json() const;
  static DynamicsConfig from_json(const nlohmann::json& j);
};

// Padded batch of trajectories: row (b * time + t) holds step t of sequence b.
struct SequenceBatch {
  std::size_t batch = 0;
  std::size_t time = 0;
  nn::Tensor states;               // [batch * time, 10]
  std::vector<int> actions;        // [batch * time]
  std::vector<std::uint8_t> mask;  // [batch * time], valid prefix per sequence
  nn::Tensor targets;              // [batch * time, 10] next states (zero on padding)

  void validate() const;
};

SequenceBatch make_batch(const std::vector<const std::vector<Transition>*>& episodes);

// Causal transformer over (state, action) tokens emitting raw residuals.
class DynamicsModel {
 public:
  DynamicsModel() = default;
  DynamicsModel(const DynamicsConfig& config, std::uint64_t seed);

  // Raw residual f(s_{0:t}, a_{0:t}) for every row of the batch -> [batch * time, 10].
  nn::Var raw_residual(const nn::Tensor& states, std::span<const int> actions, std::size_t batch,
                       std::size_t time) const;
  // s_t + 0.05 * tanh(f), before clipping.
  nn::Var bounded_update(const nn::Tensor& states, std::span<const int> actions, std::size_t batch,
                         std::size_t time) const;

  // Next state after history (states[0..t], actions[0..t]); clipped to [0,1].
  State predict_next(const std::vector<State>& states, const std::vector<int>& actions) const;

  nn::ParamList params() const;
  // Parameters updated online; embeddings and input projection stay frozen.
  nn::ParamList online_params() const;
  nn::ParamList frozen_params() const;
  const DynamicsConfig& config() const { return config_; }

  // Test hook: replaces the residual network with a fixed function of the state.
  void set_residual_override(std::function<State(const State&)> f) { override_ = std::move(f); }

  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);
  DynamicsModel clone() const;

  friend class DynamicsStepper;

 private:
  DynamicsConfig config_;
  nn::Dense state_in_;
  nn::Embedding action_in_;
  nn::Tensor positions_;
  std::vector<nn::EncoderLayer> layers_;
  nn::LayerNorm final_norm_;
  nn::Dense head_;
  std::function<State(const State&)> override_;
};

// Bounded residual step: clip(s + 0.05 tanh(raw), 0, 1).
State apply_bounded_update(const State& s, const State& raw);

// Incremental inference with cached keys/values; step t sees tokens 0..t only and
// matches the full forward pass at position t.
class DynamicsStepper {
 public:
  DynamicsStepper(const DynamicsModel& model, std::size_t batch);

  // Appends one (state, action) token per sequence and returns clipped next states.
  std::vector<State> step(const std::vector<State>& states, const std::vector<int>& actions);
  // Same as step but returns raw residuals.
  std::vector<State> step_raw(const std::vector<State>& states, const std::vector<int>& actions);
  std::size_t time() const { return t_; }
  std::size_t batch() const { return batch_; }

 private:
  const DynamicsModel* model_;
  std::size_t batch_;
  std::size_t t_ = 0;
  // Per layer: keys and values, [batch][max_time * width].
  std::vector<std::vector<std::vector<double>>> keys_;
  std::vector<std::vector<std::vector<double>>> values_;
};

struct EnsemblePrediction {
  std::vector<State> mean;
  std::vector<State> variance;  // sample variance across members
};

class TwinEnsemble {
 public:
  TwinEnsemble() = default;
  explicit TwinEnsemble(std::vector<DynamicsModel> members);

  const std::vector<DynamicsModel>& members() const { return members_; }
  std::vector<DynamicsModel>& members() { return members_; }
  std::size_t size() const { return members_.size(); }

  // Prediction for the next state after a single history.
  std::pair<State, State> predict(const std::vector<State>& states, const std::vector<int>& actions) const;

  void save(const std::filesystem::path& dir, const nlohmann::json& manifest_extra = {}) const;
  static TwinEnsemble load(const std::filesystem::path& dir);

 private:
  std::vector<DynamicsModel> members_;
};

// Per-component mean (re-clipped) and sample variance of member predictions.
std::pair<State, State> combine_members(const std::vector<State>& member_predictions);

class EnsembleStepper {
 public:
  EnsembleStepper(const TwinEnsemble& ens, std::size_t batch);
  EnsemblePrediction step(const std::vector<State>& states, const std::vector<int>& actions);
  std::size_t time() const { return steppers_.front().time(); }

 private:
  std::vector<DynamicsStepper> steppers_;
};

}  // namespace twinbench::twin
