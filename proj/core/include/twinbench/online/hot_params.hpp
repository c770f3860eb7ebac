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
#include <string>

#include <nlohmann/json.hpp>

namespace twinbench::online {

struct HotParams {
  // Tier 1: instant controls.
  double tau = 0.2;
  std::size_t batch_size = 32;
  double rate_hz = 10.0;
  std::size_t candidate_n = 5;
  double phi = 0.0;  // accepted, no effect on discrete actions
  // Tier 2: objective and target settings; changes schedule focused steps.
  double gamma = 0.99;
  double rho = 0.995;
  double lambda = 0.1;
  double beta = 0.0;  // accepted, no effect on discrete actions
  std::size_t focused_steps = 500;

  void validate() const;
  nlohmann::json to_json() const;
};

struct TierResult {
  bool accepted = false;
  int tier = 0;
  std::string param;
  std::string message;
  std::int64_t effective_at = -1;  // stream step where the change applies
  std::size_t focused_steps = 0;   // scheduled by tier-2 changes
  bool retarget = false;           // gamma changed: TD targets are recomputed

  nlohmann::json to_json() const;
};

// Tier of a parameter name: 1, 2 or 3; 0 when unknown.
int parameter_tier(const std::string& name);

// Validates and applies one change. Unknown names and invalid values throw
// std::invalid_argument; tier-3 names are rejected with accepted = false.
TierResult apply_hot_param(HotParams& hot, const std::string& name, const nlohmann::json& value,
                           std::int64_t next_step);

}  // namespace twinbench::online
