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
#include <span>
#include <vector>

namespace twinbench::eval {

// sum_t gamma^t r_t
double discounted_return(std::span<const double> rewards, double gamma = 0.99);

double mean(std::span<const double> xs);
// Sample standard deviation (n - 1).
double sample_std(std::span<const double> xs);

// mean / sample std over episodes. Throws on fewer than two returns or zero spread.
double sharpe_like(std::span<const double> returns);

// Shannon entropy (nats) of the empirical action distribution.
double action_entropy(std::span<const int> actions, int num_actions = 5);

double mse(std::span<const double> pred, std::span<const double> target);
double mae(std::span<const double> pred, std::span<const double> target);
// 1 - SSE/SST about the target mean.
double r_squared(std::span<const double> pred, std::span<const double> target);

struct Calibration {
  double ece = 0.0;
  double mce = 0.0;
  int bins_used = 0;
};

// Equal-width bins over the prediction range; empty bins are skipped.
Calibration calibration(std::span<const double> pred, std::span<const double> target, int bins);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// Percentile bootstrap interval for the mean.
Interval bootstrap_mean_ci(std::span<const double> xs, std::uint64_t seed, int resamples = 10000,
                           double level = 0.95);

}  // namespace twinbench::eval
