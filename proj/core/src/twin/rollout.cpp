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

#include "twinbench/twin/rollout.hpp"

#include <stdexcept>

#include "twinbench/cohort/generator.hpp"

namespace twinbench::twin {

std::vector<Trajectory> rollout(const TwinEnsemble& ens, const outcome::OutcomeModel& outcome, const PolicyFn& policy,
                                const std::vector<State>& initial_states, int horizon) {
  if (horizon < 0 || horizon > kHorizon) throw std::invalid_argument("rollout: horizon must be in [0,50]");
  const std::size_t n = initial_states.size();
  std::vector<Trajectory> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!valid_state(initial_states[i])) throw std::invalid_argument("rollout: invalid initial state");
    out[i].states.push_back(initial_states[i]);
  }
  if (n == 0 || horizon == 0) return out;

  const double spo2_floor = cohort::EffectTable::standard().termination_spo2;
  EnsembleStepper stepper(ens, n);
  std::vector<State> current = initial_states;
  std::vector<bool> active(n, true);
  for (int t = 0; t < horizon; ++t) {
    std::vector<std::size_t> live;
    std::vector<State> live_states;
    for (std::size_t i = 0; i < n; ++i) {
      if (active[i]) {
        live.push_back(i);
        live_states.push_back(current[i]);
      }
    }
    if (live.empty()) break;
    const std::vector<int> chosen = policy(live_states);
    if (chosen.size() != live.size()) throw std::invalid_argument("rollout: policy returned the wrong batch size");
    std::vector<int> actions(n, kConservativeAction);
    for (std::size_t j = 0; j < live.size(); ++j) {
      if (!valid_action(chosen[j])) throw std::invalid_argument("rollout: policy emitted an invalid action");
      actions[live[j]] = chosen[j];
    }
    // Finished episodes keep feeding their last state so the batched cache stays aligned.
    const EnsemblePrediction pred = stepper.step(current, actions);
    const std::vector<double> rewards = outcome.predict_batch(live_states, chosen);
    for (std::size_t j = 0; j < live.size(); ++j) {
      const std::size_t i = live[j];
      Trajectory& tr = out[i];
      tr.actions.push_back(chosen[j]);
      tr.rewards.push_back(rewards[j]);
      tr.variances.push_back(pred.variance[i]);
      tr.states.push_back(pred.mean[i]);
      current[i] = pred.mean[i];
      if (pred.mean[i][kSpo2] < spo2_floor) {
        tr.terminated_early = t + 1 < horizon;
        active[i] = false;
      }
    }
  }
  return out;
}

}  // namespace twinbench::twin
