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

#include "twinbench/online/hot_params.hpp"

#include <array>
#include <stdexcept>

namespace twinbench::online {

namespace {

constexpr std::array<const char*, 5> kTier1{"tau", "batch_size", "rate_hz", "candidate_n", "phi"};
constexpr std::array<const char*, 4> kTier2{"gamma", "rho", "lambda", "beta"};
constexpr std::array<const char*, 6> kTier3{"feature_space", "architecture", "state_dim",
                                            "action_space", "hidden_width", "ensemble_size"};

template <std::size_t N>
bool contains(const std::array<const char*, N>& names, const std::string& name) {
  for (const char* n : names) {
    if (name == n) return true;
  }
  return false;
}

double number(const nlohmann::json& v, const std::string& name) {
  if (!v.is_number()) throw std::invalid_argument("hot parameter " + name + " must be a number");
  return v.get<double>();
}

std::size_t count(const nlohmann::json& v, const std::string& name) {
  if (!v.is_number_integer() || v.get<long long>() < 1) {
    throw std::invalid_argument("hot parameter " + name + " must be a positive integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

void HotParams::validate() const {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("tau must be in [0,1]");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(rate_hz > 0.0)) throw std::invalid_argument("rate_hz must be > 0");
  if (candidate_n < 1 || candidate_n > 5) throw std::invalid_argument("candidate_n must be in [1,5]");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must be in [0,1)");
  if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("rho must be in [0,1)");
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be > 0");
  if (!(beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
}

nlohmann::json HotParams::to_json() const {
  return {{"tau", tau},   {"batch_size", batch_size}, {"rate_hz", rate_hz}, {"candidate_n", candidate_n},
          {"phi", phi},   {"gamma", gamma},           {"rho", rho},         {"lambda", lambda},
          {"beta", beta}, {"focused_steps", focused_steps}};
}

nlohmann::json TierResult::to_json() const {
  return {{"accepted", accepted},         {"tier", tier},
          {"param", param},               {"message", message},
          {"effective_at", effective_at}, {"focused_steps", focused_steps},
          {"retarget", retarget}};
}

int parameter_tier(const std::string& name) {
  if (contains(kTier1, name)) return 1;
  if (contains(kTier2, name)) return 2;
  if (contains(kTier3, name)) return 3;
  return 0;
}

TierResult apply_hot_param(HotParams& hot, const std::string& name, const nlohmann::json& value,
                           std::int64_t next_step) {
  TierResult r;
  r.param = name;
  r.tier = parameter_tier(name);
  if (r.tier == 0) throw std::invalid_argument("unknown hot parameter: " + name);
  if (r.tier == 3) {
    r.message = "full retrain required";
    return r;
  }
  HotParams next = hot;
  if (name == "tau") next.tau = number(value, name);
  else if (name == "batch_size") next.batch_size = count(value, name);
  else if (name == "rate_hz") next.rate_hz = number(value, name);
  else if (name == "candidate_n") next.candidate_n = count(value, name);
  else if (name == "phi") next.phi = number(value, name);
  else if (name == "gamma") next.gamma = number(value, name);
  else if (name == "rho") next.rho = number(value, name);
  else if (name == "lambda") next.lambda = number(value, name);
  else if (name == "beta") next.beta = number(value, name);
  next.validate();
  r.retarget = name == "gamma" && next.gamma != hot.gamma;
  hot = next;
  r.accepted = true;
  r.effective_at = next_step;
  if (r.tier == 1) {
    r.message = "applied";
  } else {
    r.focused_steps = hot.focused_steps;
    r.message = std::to_string(hot.focused_steps) + " focused steps scheduled";
  }
  return r;
}

}  // namespace twinbench::online
