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

#include <functional>
#include <vector>

#include "twinbench/outcome/outcome.hpp"
#include "twinbench/twin/dynamics.hpp"

namespace twinbench::twin {

// Maps the current states of a batch of episodes to one action each.
using PolicyFn = std::function<std::vector<int>(const std::vector<State>&)>;

struct Trajectory {
  std::vector<State> states;  // s_0 .. s_T
  std::vector<int> actions;
  std::vector<double> rewards;      // outcome-model rewards, raw units
  std::vector<State> variances;     // ensemble variance of each predicted step
  bool terminated_early = false;
};

// Closed-loop rollouts in the learned environment: ensemble-mean dynamics and
// outcome-model rewards. An episode ends when predicted spo2 drops below the
// termination threshold or after `horizon` steps.
std::vector<Trajectory> rollout(const TwinEnsemble& ens, const outcome::OutcomeModel& outcome, const PolicyFn& policy,
                                const std::vector<State>& initial_states, int horizon);

}  // namespace twinbench::twin
