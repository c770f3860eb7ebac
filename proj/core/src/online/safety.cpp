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

#include "twinbench/online/safety.hpp"

#include <stdexcept>

#include "twinbench/embedded_data.hpp"

namespace twinbench::online {

namespace {

std::size_t feature_index(const nlohmann::json& j) {
  const auto f = j.at("feature").get<std::size_t>();
  if (f >= kStateDim) throw std::invalid_argument("safety rules: feature index out of range");
  return f;
}

}  // namespace

SafetyRules SafetyRules::from_json(const nlohmann::json& j) {
  SafetyRules r;
  r.fallback_action = j.at("fallback_action").get<int>();
  if (r.fallback_action != kConservativeAction) throw std::invalid_argument("safety rules: fallback must be Placebo");
  for (const auto& e : j.at("ranges")) {
    RangeRule rr{e.at("id"), feature_index(e), e.at("lo"), e.at("hi")};
    if (!(rr.lo < rr.hi)) throw std::invalid_argument("safety rules: empty range " + rr.id);
    r.ranges.push_back(rr);
  }
  for (const auto& e : j.at("critical")) {
    r.critical.push_back({e.at("id"), feature_index(e), e.at("below"), e.value("force_query", false)});
  }
  for (const auto& e : j.at("contraindications")) {
    Contraindication c;
    c.id = e.at("id");
    c.action = e.at("action");
    if (!valid_action(c.action)) throw std::invalid_argument("safety rules: invalid action in " + c.id);
    c.feature = feature_index(e);
    if (e.contains("above")) {
      c.above = true;
      c.threshold = e.at("above");
    } else {
      c.above = false;
      c.threshold = e.at("below");
    }
    r.contraindications.push_back(c);
  }
  return r;
}

const SafetyRules& SafetyRules::standard() {
  static const SafetyRules rules = from_json(nlohmann::json::parse(embedded::kSafetyRulesJson));
  return rules;
}

nlohmann::json SafetyVerdict::to_json() const {
  return {{"pass", pass}, {"violations", violations}, {"fallback", fallback}, {"force_query", force_query}};
}

SafetyVerdict safety_gate(const State& s, int action, const SafetyRules& rules, const cohort::EffectTable& table) {
  if (!valid_action(action)) throw std::invalid_argument("safety_gate: invalid action");
  SafetyVerdict v;
  v.fallback = rules.fallback_action;
  if (action != kConservativeAction) {
    const State& effect = table.base_effect[static_cast<std::size_t>(action)];
    for (const auto& r : rules.ranges) {
      const double x = s[r.feature];
      const double d = effect[r.feature];
      if ((x < r.lo && d < 0.0) || (x > r.hi && d > 0.0)) v.violations.push_back(r.id);
    }
  }
  for (const auto& c : rules.critical) {
    if (s[c.feature] < c.below) {
      v.violations.push_back(c.id);
      if (c.force_query) v.force_query = true;
    }
  }
  for (const auto& c : rules.contraindications) {
    if (c.action != action) continue;
    const double x = s[c.feature];
    if (c.above ? x > c.threshold : x < c.threshold) v.violations.push_back(c.id);
  }
  v.pass = v.violations.empty();
  return v;
}

std::string vital_flag(const State& s, const RangeRule& rule) {
  const double x = s[rule.feature];
  if (x < rule.lo) return "low";
  if (x > rule.hi) return "high";
  return "normal";
}

}  // namespace twinbench::online
