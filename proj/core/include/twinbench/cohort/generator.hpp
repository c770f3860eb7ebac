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
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "twinbench/cohort/types.hpp"

namespace twinbench::cohort {

inline constexpr const char* kGeneratorVersion = "twinbench-cohort/1";

// Treatment-effect table, interaction constants, reward weights and behavior
// weights. The default instance is parsed from the committed effects.json.
struct EffectTable {
  std::array<State, kNumActions> base_effect{};
  ActionValues cost{};

  double homeostasis_rate = 0.1;
  std::vector<std::size_t> homeostasis_features;
  double spo2_target = 0.95;
  double spo2_recovery_rate = 0.1;
  double spo2_decompensation_below = 0.8;
  double spo2_decompensation_step = -0.02;
  double age_bp_gain = 0.01;
  double bmi_glucose_gain = 0.01;
  double medc_renal_threshold = 0.7;
  double medc_renal_hr = -0.015;
  double medc_renal_temperature = 0.02;
  double combo_hypoxia_threshold = 0.85;
  double combo_hypoxia_spo2 = -0.02;
  double anemia_threshold = 0.35;
  double anemia_spo2 = -0.005;

  double noise_std = 0.01;
  double termination_spo2 = 0.2;
  int horizon = kHorizon;

  std::vector<std::size_t> penalty_features;
  double penalty_weight = 1.0;
  double improvement_bonus = 0.5;
  double oxygen_threshold = 0.9;
  double oxygen_bonus = 0.3;

  ActionValues behavior_weight{};
  double high_glucose = 0.7;
  double high_glucose_meda_factor = 3.0;
  double low_spo2 = 0.4;
  double low_spo2_placebo_factor = 0.2;

  static EffectTable from_json(const nlohmann::json& j);
  static const EffectTable& standard();
  // SHA-256 of the committed effect-table file.
  static std::string standard_hash();
};

State sample_initial_state(Rng& rng);

ActionValues behavior_probabilities(const State& s, const EffectTable& table = EffectTable::standard());
int behavior_action(const State& s, Rng& rng, const EffectTable& table = EffectTable::standard());

// Deterministic part of the transition: base effect plus interaction terms, before noise.
State drift_terms(const State& s, int action, const EffectTable& table = EffectTable::standard());
// Noise-free next state, clipped to [0,1].
State mean_next_state(const State& s, int action, const EffectTable& table = EffectTable::standard());

RewardParts reward_parts(const State& s, int action, const State& next,
                         const EffectTable& table = EffectTable::standard());

struct StepResult {
  State next_state{};
  RewardParts parts;
  double reward = 0.0;
  bool done = false;
};

// One generator step at time index t. noise_scale = 0 yields the mean transition.
StepResult env_step(const State& s, int action, int t, Rng& rng, double noise_scale = 1.0,
                    const EffectTable& table = EffectTable::standard());

bool terminal_state(const State& s, int t, const EffectTable& table = EffectTable::standard());

}  // namespace twinbench::cohort
