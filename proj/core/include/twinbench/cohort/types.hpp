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
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace twinbench {

inline constexpr std::size_t kStateDim = 10;
inline constexpr std::size_t kNumActions = 5;
inline constexpr int kHorizon = 50;

enum Feature : std::size_t {
  kBloodPressure = 0,
  kHeartRate = 1,
  kGlucose = 2,
  kCreatinine = 3,
  kHemoglobin = 4,
  kTemperature = 5,
  kSpo2 = 6,
  kAge = 7,
  kGender = 8,
  kBmi = 9,
};

enum Action : int {
  kMedA = 0,
  kMedB = 1,
  kMedC = 2,
  kCombo = 3,
  kPlacebo = 4,
};

// Placebo is the only conservative action.
inline constexpr int kConservativeAction = kPlacebo;

using State = std::array<double, kStateDim>;
using ActionValues = std::array<double, kNumActions>;
using Rng = std::mt19937_64;

std::string_view feature_name(std::size_t index);
std::string_view action_name(int action);
int action_from_name(std::string_view name);  // -1 when unknown

bool valid_state(const State& s);
bool valid_action(int a);
State clip_state(State s);

// Independent sub-stream for (seed, stream, index); stable across runs.
Rng derive_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

// Additive terms of the one-step reward; reward == penalty + bonus + cost exactly.
struct RewardParts {
  double penalty = 0.0;  // <= 0
  double bonus = 0.0;    // >= 0
  double cost = 0.0;     // <= 0
  double total() const { return penalty + bonus + cost; }
};

struct Transition {
  int patient_id = 0;
  int t = 0;
  State state{};
  int action = kPlacebo;
  double reward = 0.0;
  RewardParts parts;
  State next_state{};
  bool done = false;
};

}  // namespace twinbench
