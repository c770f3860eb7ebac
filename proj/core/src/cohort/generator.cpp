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

#include "twinbench/cohort/generator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "twinbench/embedded_data.hpp"

namespace twinbench::cohort {

namespace {

std::vector<std::size_t> index_list(const nlohmann::json& j) {
  std::vector<std::size_t> out;
  for (const auto& v : j) {
    const auto i = v.get<std::size_t>();
    if (i >= kStateDim) throw std::invalid_argument("effect table: feature index out of range");
    out.push_back(i);
  }
  return out;
}

}  // namespace

EffectTable EffectTable::from_json(const nlohmann::json& j) {
  EffectTable t;
  const auto& be = j.at("base_effect");
  if (be.size() != kNumActions) throw std::invalid_argument("effect table: base_effect must have 5 rows");
  for (std::size_t a = 0; a < kNumActions; ++a) {
    if (be[a].size() != kStateDim) throw std::invalid_argument("effect table: base_effect rows must have 10 entries");
    for (std::size_t k = 0; k < kStateDim; ++k) t.base_effect[a][k] = be[a][k].get<double>();
  }
  const auto& cost = j.at("cost");
  const auto& bw = j.at("behavior").at("base_weight");
  if (cost.size() != kNumActions || bw.size() != kNumActions) {
    throw std::invalid_argument("effect table: cost and behavior weights need 5 entries");
  }
  for (std::size_t a = 0; a < kNumActions; ++a) {
    t.cost[a] = cost[a].get<double>();
    t.behavior_weight[a] = bw[a].get<double>();
  }
  const auto& in = j.at("interactions");
  t.homeostasis_rate = in.at("homeostasis_rate");
  t.homeostasis_features = index_list(in.at("homeostasis_features"));
  t.spo2_target = in.at("spo2_target");
  t.spo2_recovery_rate = in.at("spo2_recovery_rate");
  t.spo2_decompensation_below = in.at("spo2_decompensation_below");
  t.spo2_decompensation_step = in.at("spo2_decompensation_step");
  t.age_bp_gain = in.at("age_bp_gain");
  t.bmi_glucose_gain = in.at("bmi_glucose_gain");
  t.medc_renal_threshold = in.at("medc_renal_threshold");
  t.medc_renal_hr = in.at("medc_renal_hr");
  t.medc_renal_temperature = in.at("medc_renal_temperature");
  t.combo_hypoxia_threshold = in.at("combo_hypoxia_threshold");
  t.combo_hypoxia_spo2 = in.at("combo_hypoxia_spo2");
  t.anemia_threshold = in.at("anemia_threshold");
  t.anemia_spo2 = in.at("anemia_spo2");
  t.noise_std = j.at("noise_std");
  t.termination_spo2 = j.at("termination_spo2");
  t.horizon = j.at("horizon");
  const auto& r = j.at("reward");
  t.penalty_features = index_list(r.at("penalty_features"));
  t.penalty_weight = r.at("penalty_weight");
  t.improvement_bonus = r.at("improvement_bonus");
  t.oxygen_threshold = r.at("oxygen_threshold");
  t.oxygen_bonus = r.at("oxygen_bonus");
  const auto& b = j.at("behavior");
  t.high_glucose = b.at("high_glucose");
  t.high_glucose_meda_factor = b.at("high_glucose_meda_factor");
  t.low_spo2 = b.at("low_spo2");
  t.low_spo2_placebo_factor = b.at("low_spo2_placebo_factor");
  if (t.horizon < 1 || t.horizon > kHorizon) throw std::invalid_argument("effect table: horizon must be in [1, 50]");
  return t;
}

const EffectTable& EffectTable::standard() {
  static const EffectTable table = from_json(nlohmann::json::parse(embedded::kEffectsJson));
  return table;
}

std::string EffectTable::standard_hash() { return embedded::kEffectsSha256; }

State sample_initial_state(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  State s{};
  s[kBloodPressure] = 0.5 + 0.15 * n(rng);
  s[kHeartRate] = 0.5 + 0.1 * n(rng);
  s[kGlucose] = 0.5 + 0.2 * n(rng);
  s[kCreatinine] = 0.5 + 0.15 * n(rng);
  s[kHemoglobin] = 0.5 + 0.15 * n(rng);
  s[kTemperature] = 0.5 + 0.05 * n(rng);
  s[kSpo2] = 0.95 - std::abs(0.05 * n(rng));
  s[kAge] = u(rng);
  s[kGender] = u(rng) < 0.5 ? 0.0 : 1.0;
  s[kBmi] = 0.5 + 0.15 * n(rng);
  return clip_state(s);
}

ActionValues behavior_probabilities(const State& s, const EffectTable& table) {
  ActionValues w = table.behavior_weight;
  if (s[kGlucose] > table.high_glucose) w[kMedA] *= table.high_glucose_meda_factor;
  if (s[kSpo2] < table.low_spo2) w[kPlacebo] *= table.low_spo2_placebo_factor;
  double total = 0.0;
  for (double v : w) total += v;
  for (double& v : w) v /= total;
  return w;
}

int behavior_action(const State& s, Rng& rng, const EffectTable& table) {
  const ActionValues p = behavior_probabilities(s, table);
  std::discrete_distribution<int> d(p.begin(), p.end());
  return d(rng);
}

State drift_terms(const State& s, int action, const EffectTable& table) {
  if (!valid_action(action)) throw std::invalid_argument("drift_terms: invalid action");
  State d = table.base_effect[static_cast<std::size_t>(action)];
  for (std::size_t k : table.homeostasis_features) d[k] -= table.homeostasis_rate * (s[k] - 0.5);
  if (s[kSpo2] >= table.spo2_decompensation_below) {
    d[kSpo2] += table.spo2_recovery_rate * (table.spo2_target - s[kSpo2]);
  } else {
    d[kSpo2] += table.spo2_decompensation_step;
  }
  d[kBloodPressure] += table.age_bp_gain * (s[kAge] - 0.5);
  d[kGlucose] += table.bmi_glucose_gain * (s[kBmi] - 0.5);
  if (action == kMedC && s[kCreatinine] > table.medc_renal_threshold) {
    d[kHeartRate] += table.medc_renal_hr;
    d[kTemperature] += table.medc_renal_temperature;
  }
  if (action == kCombo && s[kSpo2] < table.combo_hypoxia_threshold) d[kSpo2] += table.combo_hypoxia_spo2;
  if (s[kHemoglobin] < table.anemia_threshold) d[kSpo2] += table.anemia_spo2;
  return d;
}

State mean_next_state(const State& s, int action, const EffectTable& table) {
  const State d = drift_terms(s, action, table);
  State out{};
  for (std::size_t k = 0; k < kStateDim; ++k) out[k] = s[k] + d[k];
  return clip_state(out);
}

RewardParts reward_parts(const State& s, int action, const State& next, const EffectTable& table) {
  const State mean = mean_next_state(s, action, table);
  RewardParts parts;
  double penalty = 0.0;
  int improved = 0;
  for (std::size_t k : table.penalty_features) {
    penalty += table.penalty_weight * std::abs(next[k] - 0.5);
    if (std::abs(mean[k] - 0.5) < std::abs(s[k] - 0.5)) ++improved;
  }
  parts.penalty = -penalty;
  parts.bonus = table.improvement_bonus * improved + (next[kSpo2] > table.oxygen_threshold ? table.oxygen_bonus : 0.0);
  parts.cost = -table.cost[static_cast<std::size_t>(action)];
  return parts;
}

bool terminal_state(const State& s, int t, const EffectTable& table) {
  return s[kSpo2] < table.termination_spo2 || t + 1 >= table.horizon;
}

StepResult env_step(const State& s, int action, int t, Rng& rng, double noise_scale, const EffectTable& table) {
  if (!valid_action(action)) throw std::invalid_argument("env_step: invalid action");
  if (!valid_state(s)) throw std::invalid_argument("env_step: state outside [0,1]");
  const State d = drift_terms(s, action, table);
  std::normal_distribution<double> noise(0.0, table.noise_std);
  StepResult out;
  for (std::size_t k = 0; k < kStateDim; ++k) {
    const double eps = noise(rng) * noise_scale;
    out.next_state[k] = s[k] + d[k] + eps;
  }
  out.next_state = clip_state(out.next_state);
  out.parts = reward_parts(s, action, out.next_state, table);
  out.reward = out.parts.total();
  out.done = terminal_state(out.next_state, t, table);
  return out;
}

}  // namespace twinbench::cohort
