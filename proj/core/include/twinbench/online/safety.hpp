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

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "twinbench/cohort/generator.hpp"

namespace twinbench::online {

struct RangeRule {
  std::string id;
  std::size_t feature = 0;
  double lo = 0.0;
  double hi = 1.0;
};

// State-only check; fires for every action.
struct CriticalRule {
  std::string id;
  std::size_t feature = 0;
  double below = 0.0;
  bool force_query = false;
};

struct Contraindication {
  std::string id;
  int action = 0;
  std::size_t feature = 0;
  bool above = true;  // true: fires when s[feature] > threshold; false: when below
  double threshold = 0.0;
};

struct SafetyRules {
  int fallback_action = kConservativeAction;
  std::vector<RangeRule> ranges;
  std::vector<CriticalRule> critical;
  std::vector<Contraindication> contraindications;

  static SafetyRules from_json(const nlohmann::json& j);
  // Rules parsed from the committed safety_rules.json.
  static const SafetyRules& standard();
};

struct SafetyVerdict {
  bool pass = true;
  std::vector<std::string> violations;
  int fallback = kConservativeAction;
  bool force_query = false;

  nlohmann::json to_json() const;
};

// Range rules fire when the vital is outside its band and the action's base
// effect moves it further out; the conservative action is exempt from them.
SafetyVerdict safety_gate(const State& s, int action, const SafetyRules& rules = SafetyRules::standard(),
                          const cohort::EffectTable& table = cohort::EffectTable::standard());

// Flag per gate range: "normal", "low" or "high".
std::string vital_flag(const State& s, const RangeRule& rule);

}  // namespace twinbench::online
