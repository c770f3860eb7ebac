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
#include <optional>
#include <string>
#include <vector>

#include "twinbench/outcome/outcome.hpp"
#include "twinbench/policy/qnet.hpp"
#include "twinbench/twin/rollout.hpp"

namespace twinbench::policy {

enum class PolicyKind { kBcq, kDqn, kDoubleDqn, kNfq, kCql };

std::string kind_name(PolicyKind k);
PolicyKind kind_from_name(const std::string& name);

// Logged transitions with z-scored rewards.
struct OfflineData {
  std::vector<State> states;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<State> next_states;
  std::vector<std::uint8_t> done;

  std::size_t size() const { return states.size(); }
};

OfflineData make_offline_data(const std::vector<Transition>& rows, const outcome::RewardNormStats& stats);

struct QTrainConfig {
  std::size_t steps = 20000;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  double gamma = 0.99;
  double rho = 0.995;
  std::size_t sync_every = 1000;
  std::size_t candidate_n = kNumActions;
  double huber_delta = 1.0;
  double cql_alpha = 1.0;
  std::size_t nfq_sweeps = 20;
  std::size_t behavior_epochs = 5;
  std::size_t hidden = 64;
  std::size_t snapshot_every = 250;
};

struct QTrainReport {
  std::size_t steps_run = 0;
  bool diverged = false;
  std::vector<double> loss;  // mean loss per snapshot window
};

BehaviorModel train_behavior(const OfflineData& data, std::uint64_t seed, const QTrainConfig& config);

// Fits a Q network of the given kind. BCQ needs the behavior model and tau_supp.
// A non-finite loss restores the last stable snapshot and stops.
QNetwork train_q(PolicyKind kind, const OfflineData& data, std::uint64_t seed, const QTrainConfig& config,
                 const BehaviorModel* behavior = nullptr, double tau_supp = 0.0, QTrainReport* report = nullptr);

// Greedy policy over a trained network; BCQ restricts the greedy set by b(a|s) >= tau_supp.
struct OfflinePolicy {
  PolicyKind kind = PolicyKind::kBcq;
  QNetwork q;
  std::optional<BehaviorModel> behavior;
  double tau_supp = 0.0;
  double gamma = 0.99;
  std::string reward_stats_fingerprint;
  std::uint64_t seed = 0;

  std::vector<int> act(const std::vector<State>& states) const;
  twin::PolicyFn fn() const;

  void save(const std::filesystem::path& dir) const;
  static OfflinePolicy load(const std::filesystem::path& dir);
};

struct PolicyEvaluation {
  std::vector<double> returns;  // discounted, one per episode
  double mean_return = 0.0;
  double std_return = 0.0;
  double sharpe = 0.0;
  double action_entropy = 0.0;
  double gate_pass_rate = 0.0;  // proposals passing the safety gate, before substitution
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  ActionValues action_share{};

  nlohmann::json to_json() const;
};

PolicyEvaluation evaluate_policy(const twin::TwinEnsemble& ens, const outcome::OutcomeModel& outcome,
                                 const twin::PolicyFn& policy, const std::vector<State>& initial_states,
                                 double gamma = 0.99, std::uint64_t bootstrap_seed = 0, int bootstrap_resamples = 10000);

inline const std::vector<double> kTauGrid{0.05, 0.1, 0.2, 0.3};

struct BcqSelection {
  double tau_supp = 0.0;
  std::vector<double> validation_returns;  // one per grid value
};

// Trains one BCQ network per tau_supp and keeps the best twin-environment validation return.
OfflinePolicy train_bcq(const OfflineData& data, const twin::TwinEnsemble& ens, const outcome::OutcomeModel& outcome,
                        const std::vector<State>& validation_starts, std::uint64_t seed, const QTrainConfig& config,
                        const std::vector<double>& grid = kTauGrid, BcqSelection* selection = nullptr);

OfflinePolicy train_baseline(PolicyKind kind, const OfflineData& data, std::uint64_t seed, const QTrainConfig& config);

// Five BCQ heads for the online stage: head 0 is the selected policy's network, the
// rest are retrained at its tau_supp on bootstrap resamples from different initializations.
QEnsemble train_q_ensemble(const OfflinePolicy& bcq, const OfflineData& data, const QTrainConfig& config);

}  // namespace twinbench::policy
