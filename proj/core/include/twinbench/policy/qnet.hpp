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
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "twinbench/cohort/types.hpp"
#include "twinbench/nn/layers.hpp"

namespace twinbench::policy {

inline constexpr std::size_t kQEnsembleSize = 5;

// [N, 10] tensor from a list of states.
nn::Tensor states_tensor(const std::vector<State>& states);

// Dueling Q network: two-layer ReLU trunk feeding value and advantage streams.
class QNetwork {
 public:
  QNetwork() = default;
  QNetwork(std::uint64_t seed, std::size_t hidden = 64);

  nn::Var forward(const nn::Tensor& states) const;  // [N, 5]
  std::vector<ActionValues> values(const std::vector<State>& states) const;
  ActionValues values(const State& s) const;

  nn::ParamList params() const;
  std::size_t hidden() const { return hidden_; }
  QNetwork clone() const;

 private:
  std::size_t hidden_ = 64;
  nn::Dense l1_, l2_;
  nn::DuelingHead head_;
};

// Softmax classifier b(a|s) fit to the logged actions.
class BehaviorModel {
 public:
  BehaviorModel() = default;
  BehaviorModel(std::uint64_t seed, std::size_t hidden = 64);

  nn::Var logits(const nn::Tensor& states) const;
  std::vector<ActionValues> probabilities(const std::vector<State>& states) const;
  ActionValues probabilities(const State& s) const;

  nn::ParamList params() const;
  BehaviorModel clone() const;

 private:
  std::size_t hidden_ = 64;
  nn::Dense l1_, l2_;
};

// Lowest index among the maxima.
int argmax(const ActionValues& v);
int greedy_action(const ActionValues& q);

// Actions with b(a|s) >= tau_supp, in index order; empty when none qualifies.
std::vector<int> supported_actions(const ActionValues& behavior, double tau_supp);
// Greedy over the supported set; falls back to argmax b when the set is empty.
int bcq_action(const ActionValues& behavior, const ActionValues& q, double tau_supp);

// Top-n actions by behavior probability (ties by lower index), returned in index order.
std::vector<int> candidate_set(const ActionValues& behavior, std::size_t n);

// y = r + gamma * max over candidates of min_j Q_j(s', a'); terminal -> r.
double td_target(double reward, bool terminal, double gamma, const ActionValues& min_target_q,
                 std::span<const int> candidates);

// Double-Q bootstrap value: the online network picks a', the target network scores it.
double double_q_value(const ActionValues& online_next, const ActionValues& target_next);

// Two target copies of an online network: an EMA copy (rate rho) and a copy
// hard-synced every sync_every updates. Neither receives gradients.
class TargetNetworkPair {
 public:
  TargetNetworkPair() = default;
  TargetNetworkPair(const QNetwork& online, double rho = 0.995, std::size_t sync_every = 1000);

  // Call after each optimizer step of the online network.
  void update(const QNetwork& online);
  void hard_sync(const QNetwork& online);
  // Elementwise min of the two targets, per state.
  std::vector<ActionValues> min_values(const std::vector<State>& states) const;
  std::vector<ActionValues> min_values(const nn::Tensor& states) const;

  const QNetwork& ema() const { return ema_; }
  const QNetwork& hard() const { return hard_; }
  double rho() const { return rho_; }
  void set_rho(double rho);
  std::size_t updates() const { return updates_; }

 private:
  QNetwork ema_;
  QNetwork hard_;
  double rho_ = 0.995;
  std::size_t sync_every_ = 1000;
  std::size_t updates_ = 0;
};

class QEnsemble {
 public:
  QEnsemble() = default;
  explicit QEnsemble(std::vector<QNetwork> heads);

  const std::vector<QNetwork>& heads() const { return heads_; }
  std::vector<QNetwork>& heads() { return heads_; }

  // head_values[k][i] = Q_k(states[i], .)
  std::vector<std::vector<ActionValues>> head_values(const std::vector<State>& states) const;
  std::vector<ActionValues> head_values(const State& s) const;

  void save(const std::filesystem::path& dir, const nlohmann::json& manifest_extra = {}) const;
  static QEnsemble load(const std::filesystem::path& dir);

 private:
  std::vector<QNetwork> heads_;
};

ActionValues mean_values(const std::vector<ActionValues>& head_values);
// argmax of the across-head mean.
int ensemble_action(const std::vector<ActionValues>& head_values);

}  // namespace twinbench::policy
