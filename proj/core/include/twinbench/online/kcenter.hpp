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

// Uncertainty-weighted farthest-first traversal. Seeds with the highest weight, then
// repeatedly adds the point maximizing weight * distance to the selected set.
// Ties go to the lower index. Returns indices into `points` in selection order.
std::vector<std::size_t> kcenter_select(const std::vector<std::vector<double>>& points,
                                        const std::vector<double>& weights, std::size_t k);
std::vector<std::size_t> kcenter_select(const std::vector<State>& points, const std::vector<double>& weights,
                                        std::size_t k);

// max over points of the distance to the nearest selected point.
double coverage_radius(const std::vector<std::vector<double>>& points, const std::vector<std::size_t>& selected);

}  // namespace twinbench::online
