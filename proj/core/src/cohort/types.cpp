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

#include "twinbench/cohort/types.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace twinbench {

namespace {

constexpr std::array<std::string_view, kStateDim> kFeatureNames{
    "blood_pressure", "heart_rate", "glucose", "creatinine", "hemoglobin",
    "temperature",    "spo2",       "age",     "gender",     "bmi"};
constexpr std::array<std::string_view, kNumActions> kActionNames{"MedA", "MedB", "MedC", "Combo", "Placebo"};

}  // namespace

std::string_view feature_name(std::size_t index) {
  if (index >= kStateDim) throw std::out_of_range("feature index out of range");
  return kFeatureNames[index];
}

std::string_view action_name(int action) {
  if (!valid_action(action)) throw std::out_of_range("action index out of range");
  return kActionNames[static_cast<std::size_t>(action)];
}

int action_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNumActions; ++i) {
    if (kActionNames[i] == name) return static_cast<int>(i);
  }
  return -1;
}

bool valid_state(const State& s) {
  return std::all_of(s.begin(), s.end(), [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; });
}

bool valid_action(int a) { return a >= 0 && a < static_cast<int>(kNumActions); }

State clip_state(State s) {
  for (double& v : s) v = std::clamp(v, 0.0, 1.0);
  return s;
}

Rng derive_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

}  // namespace twinbench
