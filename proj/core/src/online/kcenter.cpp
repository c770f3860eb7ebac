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

#include "twinbench/online/kcenter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace twinbench::online {

namespace {

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

std::vector<std::size_t> kcenter_select(const std::vector<std::vector<double>>& points,
                                        const std::vector<double>& weights, std::size_t k) {
  if (points.size() != weights.size()) throw std::invalid_argument("kcenter_select: weights misaligned");
  if (k < 1 || k > points.size()) throw std::invalid_argument("kcenter_select: need 1 <= k <= pool size");
  for (const auto& p : points) {
    if (p.size() != points.front().size()) throw std::invalid_argument("kcenter_select: ragged points");
  }
  std::vector<std::size_t> selected;
  std::vector<bool> taken(points.size(), false);
  std::size_t seed = 0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (weights[i] > weights[seed]) seed = i;
  }
  selected.push_back(seed);
  taken[seed] = true;
  std::vector<double> nearest(points.size(), std::numeric_limits<double>::infinity());
  while (selected.size() < k) {
    const std::size_t last = selected.back();
    std::size_t best = points.size();
    double best_score = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (taken[i]) continue;
      nearest[i] = std::min(nearest[i], distance(points[i], points[last]));
      const double score = weights[i] * nearest[i];
      if (score > best_score) {
        best_score = score;
        best = i;
      }
    }
    selected.push_back(best);
    taken[best] = true;
  }
  return selected;
}

std::vector<std::size_t> kcenter_select(const std::vector<State>& points, const std::vector<double>& weights,
                                        std::size_t k) {
  std::vector<std::vector<double>> p;
  p.reserve(points.size());
  for (const auto& s : points) p.emplace_back(s.begin(), s.end());
  return kcenter_select(p, weights, k);
}

double coverage_radius(const std::vector<std::vector<double>>& points, const std::vector<std::size_t>& selected) {
  if (selected.empty()) throw std::invalid_argument("coverage_radius: empty selection");
  double r = 0.0;
  for (const auto& p : points) {
    double d = std::numeric_limits<double>::infinity();
    for (std::size_t j : selected) d = std::min(d, distance(p, points[j]));
    r = std::max(r, d);
  }
  return r;
}

}  // namespace twinbench::online
