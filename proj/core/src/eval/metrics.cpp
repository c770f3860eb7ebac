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

#include "twinbench/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace twinbench::eval {

namespace {

void check_pair(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw std::invalid_argument("metrics: size mismatch");
  if (pred.empty()) throw std::invalid_argument("metrics: empty input");
}

}  // namespace

double discounted_return(std::span<const double> rewards, double gamma) {
  double g = 0.0;
  double w = 1.0;
  for (double r : rewards) {
    if (!std::isfinite(r)) throw std::invalid_argument("discounted_return: non-finite reward");
    g += w * r;
    w *= gamma;
  }
  return g;
}

double mean(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("mean: empty input");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sample_std(std::span<const double> xs) {
  if (xs.size() < 2) throw std::invalid_argument("sample_std: need at least two values");
  const double m = mean(xs);
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  return std::sqrt(v / static_cast<double>(xs.size() - 1));
}

double sharpe_like(std::span<const double> returns) {
  const double sd = sample_std(returns);
  if (!(sd > 0.0)) throw std::invalid_argument("sharpe_like: zero standard deviation");
  return mean(returns) / sd;
}

double action_entropy(std::span<const int> actions, int num_actions) {
  if (actions.empty()) throw std::invalid_argument("action_entropy: empty input");
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_actions), 0);
  for (int a : actions) {
    if (a < 0 || a >= num_actions) throw std::invalid_argument("action_entropy: invalid action");
    ++counts[static_cast<std::size_t>(a)];
  }
  double h = 0.0;
  for (std::size_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(actions.size());
    h -= p * std::log(p);
  }
  return h;
}

double mse(std::span<const double> pred, std::span<const double> target) {
  check_pair(pred, target);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - target[i]) * (pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

double mae(std::span<const double> pred, std::span<const double> target) {
  check_pair(pred, target);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - target[i]);
  return s / static_cast<double>(pred.size());
}

double r_squared(std::span<const double> pred, std::span<const double> target) {
  check_pair(pred, target);
  const double m = mean(target);
  double sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    sse += (pred[i] - target[i]) * (pred[i] - target[i]);
    sst += (target[i] - m) * (target[i] - m);
  }
  if (!(sst > 0.0)) throw std::invalid_argument("r_squared: constant target");
  return 1.0 - sse / sst;
}

Calibration calibration(std::span<const double> pred, std::span<const double> target, int bins) {
  check_pair(pred, target);
  if (bins < 2) throw std::invalid_argument("calibration: bins must be >= 2");
  const auto [lo_it, hi_it] = std::minmax_element(pred.begin(), pred.end());
  const double lo = *lo_it;
  const double width = (*hi_it - lo) / bins;
  std::vector<double> sp(bins, 0.0), st(bins, 0.0);
  std::vector<std::size_t> n(bins, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    int b = width > 0.0 ? static_cast<int>((pred[i] - lo) / width) : 0;
    b = std::clamp(b, 0, bins - 1);
    sp[b] += pred[i];
    st[b] += target[i];
    ++n[b];
  }
  Calibration c;
  for (int b = 0; b < bins; ++b) {
    if (n[b] == 0) continue;
    const double gap = std::abs(sp[b] - st[b]) / static_cast<double>(n[b]);
    c.ece += gap * static_cast<double>(n[b]) / static_cast<double>(pred.size());
    c.mce = std::max(c.mce, gap);
    ++c.bins_used;
  }
  return c;
}

Interval bootstrap_mean_ci(std::span<const double> xs, std::uint64_t seed, int resamples, double level) {
  if (xs.empty()) throw std::invalid_argument("bootstrap_mean_ci: empty input");
  if (resamples < 1 || !(level > 0.0 && level < 1.0)) throw std::invalid_argument("bootstrap_mean_ci: bad arguments");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, xs.size() - 1);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) s += xs[pick(rng)];
    m = s / static_cast<double>(xs.size());
  }
  std::sort(means.begin(), means.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(means.size() - 1);
    const std::size_t i = static_cast<std::size_t>(pos);
    const std::size_t j = std::min(i + 1, means.size() - 1);
    return means[i] + (pos - static_cast<double>(i)) * (means[j] - means[i]);
  };
  const double tail = (1.0 - level) / 2.0;
  return {quantile(tail), quantile(1.0 - tail)};
}

}  // namespace twinbench::eval
