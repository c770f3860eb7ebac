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

#include "twinbench/online/replay.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace twinbench::online {

ReplayBuffers::ReplayBuffers(std::size_t labeled_capacity, std::size_t weak_capacity, double decay)
    : labeled_capacity_(labeled_capacity), weak_capacity_(weak_capacity), decay_(decay) {
  if (labeled_capacity == 0 || weak_capacity == 0) throw std::invalid_argument("ReplayBuffers: capacity must be >= 1");
  if (!(decay >= 0.0)) throw std::invalid_argument("ReplayBuffers: decay must be >= 0");
}

void ReplayBuffers::add_labeled(ReplayItem item) {
  if (!(item.weight >= 0.0)) throw std::invalid_argument("ReplayBuffers: negative weight");
  if (labeled_.size() == labeled_capacity_) labeled_.pop_front();
  labeled_.push_back(std::move(item));
}

void ReplayBuffers::add_weak(ReplayItem item) {
  if (!(item.weight >= 0.0)) throw std::invalid_argument("ReplayBuffers: negative weight");
  if (weak_.size() == weak_capacity_) weak_.pop_front();
  weak_.push_back(std::move(item));
}

std::vector<double> priorities(const std::deque<ReplayItem>& items, std::int64_t now, double decay) {
  std::vector<double> w(items.size());
  double total = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    w[i] = items[i].weight * std::exp(-decay * static_cast<double>(now - items[i].collected_at));
    total += w[i];
  }
  if (!(total > 0.0)) {
    total = 0.0;
    for (std::size_t i = 0; i < items.size(); ++i) {
      w[i] = std::exp(-decay * static_cast<double>(now - items[i].collected_at));
      total += w[i];
    }
  }
  for (auto& v : w) v /= total;
  return w;
}

namespace {

void draw_without_replacement(const std::deque<ReplayItem>& items, std::size_t n, std::int64_t now, double decay,
                              Rng& rng, std::vector<ReplayItem>& out) {
  if (n == 0 || items.empty()) return;
  std::vector<double> w = priorities(items, now, decay);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double total = 1.0;
  for (std::size_t d = 0; d < n && d < items.size(); ++d) {
    double x = u(rng) * total;
    std::size_t pick = items.size();
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (w[i] <= 0.0) continue;
      pick = i;
      x -= w[i];
      if (x < 0.0) break;
    }
    if (pick == items.size()) {
      // Remaining mass is zero: take the most recent unused item.
      for (std::size_t i = w.size(); i-- > 0;) {
        if (w[i] >= 0.0) {
          pick = i;
          break;
        }
      }
    }
    out.push_back(items[pick]);
    total -= w[pick];
    w[pick] = -1.0;  // mark as used
    if (total <= 0.0) {
      total = 0.0;
      for (double v : w) total += v > 0.0 ? v : 0.0;
    }
  }
}

}  // namespace

std::vector<ReplayItem> replay_sample(const ReplayBuffers& buffers, std::size_t n, std::int64_t now, Rng& rng) {
  if (buffers.labeled().empty() && buffers.weak().empty()) throw std::invalid_argument("replay_sample: both buffers empty");
  std::vector<ReplayItem> out;
  out.reserve(n);
  draw_without_replacement(buffers.labeled(), n, now, buffers.decay(), rng, out);
  if (out.size() < n) draw_without_replacement(buffers.weak(), n - out.size(), now, buffers.decay(), rng, out);
  return out;
}

}  // namespace twinbench::online
