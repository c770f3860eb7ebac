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
#include <deque>
#include <string>
#include <vector>

#include "twinbench/cohort/types.hpp"

namespace twinbench::online {

struct ReplayItem {
  State state{};
  int action = 0;
  double reward = 0.0;  // normalized
  State next_state{};
  bool done = false;
  // Preceding (state, action) tokens of the same trajectory, oldest first.
  std::vector<State> history_states;
  std::vector<int> history_actions;
  double weight = 1.0;  // uncertainty at collection
  std::int64_t collected_at = 0;
  std::string provenance;
};

class ReplayBuffers {
 public:
  explicit ReplayBuffers(std::size_t labeled_capacity = 10000, std::size_t weak_capacity = 50000,
                         double decay = 0.01);

  void add_labeled(ReplayItem item);
  void add_weak(ReplayItem item);

  const std::deque<ReplayItem>& labeled() const { return labeled_; }
  const std::deque<ReplayItem>& weak() const { return weak_; }
  std::size_t labeled_capacity() const { return labeled_capacity_; }
  std::size_t weak_capacity() const { return weak_capacity_; }
  double decay() const { return decay_; }

 private:
  std::size_t labeled_capacity_;
  std::size_t weak_capacity_;
  double decay_;
  std::deque<ReplayItem> labeled_;
  std::deque<ReplayItem> weak_;
};

// Normalized sampling probabilities omega_i * exp(-decay * (now - t_i)). When every
// omega is zero the recency factor alone is used.
std::vector<double> priorities(const std::deque<ReplayItem>& items, std::int64_t now, double decay);

// Draws n distinct items, renormalizing after each draw. Labeled items come first;
// weak items fill the shortfall when the labeled buffer holds fewer than n.
std::vector<ReplayItem> replay_sample(const ReplayBuffers& buffers, std::size_t n, std::int64_t now, Rng& rng);

}  // namespace twinbench::online
