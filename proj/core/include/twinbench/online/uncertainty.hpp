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

#include <vector>

#include "twinbench/cohort/types.hpp"

namespace twinbench::online {

inline constexpr double kCvEpsilon = 1e-8;

struct UncertaintyStat {
  ActionValues mean{};
  ActionValues stddev{};  // sample std across heads (n - 1)
  ActionValues cv{};
  double u = 0.0;         // tanh(max_a cv_a), in [0, 1)
};

// head_values[k] = Q_k(s, .) for each head k; needs at least two heads.
UncertaintyStat uncertainty(const std::vector<ActionValues>& head_values, double eps = kCvEpsilon);

// Running mean/variance of observed states; score is the squared distance to the
// running mean normalized by the running variance trace, capped at 1.
class StateNovelty {
 public:
  void observe(const State& s);
  double score(const State& s, double eps = kCvEpsilon) const;
  std::size_t count() const { return n_; }

 private:
  std::size_t n_ = 0;
  State mean_{};
  State m2_{};
};

}  // namespace twinbench::online
