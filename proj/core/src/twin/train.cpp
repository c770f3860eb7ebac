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

#include "twinbench/twin/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "twinbench/nn/ops.hpp"

namespace twinbench::twin {

namespace {

nn::Var batch_loss(const DynamicsModel& model, const SequenceBatch& sb) {
  nn::Var pred = model.bounded_update(sb.states, sb.actions, sb.batch, sb.time);
  return nn::smooth_l1_masked(pred, sb.targets, sb.mask, 1.0);
}

}  // namespace

double sequence_loss(const DynamicsModel& model, const std::vector<const Episode*>& episodes, std::size_t batch_size) {
  nn::NoGradGuard guard;
  double total = 0.0;
  std::size_t rows = 0;
  for (std::size_t i = 0; i < episodes.size(); i += batch_size) {
    std::vector<const Episode*> chunk(episodes.begin() + static_cast<std::ptrdiff_t>(i),
                                      episodes.begin() + static_cast<std::ptrdiff_t>(std::min(episodes.size(), i + batch_size)));
    const SequenceBatch sb = make_batch(chunk);
    const std::size_t valid = static_cast<std::size_t>(std::count(sb.mask.begin(), sb.mask.end(), 1));
    total += batch_loss(model, sb).item() * static_cast<double>(valid);
    rows += valid;
  }
  return rows ? total / static_cast<double>(rows) : 0.0;
}

DynamicsModel train_dynamics(const std::vector<Episode>& train, const std::vector<Episode>& validation,
                             std::uint64_t seed, const TrainConfig& config, TrainResult* result) {
  if (train.empty() || validation.empty()) throw std::invalid_argument("train_dynamics: empty split");
  DynamicsModel model(config.model, seed);
  nn::ParamList params = model.params();
  nn::AdamWConfig opt_cfg;
  opt_cfg.learning_rate = config.learning_rate;
  nn::AdamW opt(params, opt_cfg);
  nn::PlateauScheduler sched(0.5, 2);
  nn::Rng rng(seed ^ 0x7a3d5u);

  std::vector<const Episode*> val_ptrs;
  for (const auto& e : validation) val_ptrs.push_back(&e);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult res;
  res.best_validation_loss = std::numeric_limits<double>::infinity();
  std::vector<nn::Tensor> best = nn::snapshot_values(params);
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t i = 0; i < order.size(); i += config.batch_size) {
      if (config.max_steps_per_epoch && steps >= config.max_steps_per_epoch) break;
      std::vector<const Episode*> chunk;
      for (std::size_t j = i; j < std::min(order.size(), i + config.batch_size); ++j) chunk.push_back(&train[order[j]]);
      const SequenceBatch sb = make_batch(chunk);
      nn::Var loss = batch_loss(model, sb);
      const double v = loss.item();
      if (!std::isfinite(v)) {
        throw nn::NumericalError("train_dynamics: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(steps));
      }
      loss.backward();
      opt.step();
      loss_sum += v;
      ++steps;
    }
    const double val = sequence_loss(model, val_ptrs);
    res.train_loss.push_back(loss_sum / static_cast<double>(std::max<std::size_t>(steps, 1)));
    res.validation_loss.push_back(val);
    res.epochs_run = epoch + 1;
    sched.observe(val, opt);
    if (val < res.best_validation_loss) {
      res.best_validation_loss = val;
      res.best_epoch = epoch;
      best = nn::snapshot_values(params);
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  nn::restore_values(params, best);
  if (result) *result = res;
  return model;
}

TwinEnsemble train_ensemble(const std::vector<Episode>& train, const std::vector<Episode>& validation,
                            const TrainConfig& config, std::vector<TrainResult>* results) {
  std::vector<DynamicsModel> members;
  if (results) results->clear();
  for (std::uint64_t seed = 0; seed < kEnsembleSize; ++seed) {
    TrainResult r;
    members.push_back(train_dynamics(train, validation, seed, config, &r));
    if (results) results->push_back(r);
  }
  return TwinEnsemble(std::move(members));
}

namespace {

template <typename Stepper>
std::vector<State> teacher_forced(Stepper make, const std::vector<Episode>& episodes) {
  std::vector<State> out;
  constexpr std::size_t kChunk = 256;
  for (std::size_t i = 0; i < episodes.size(); i += kChunk) {
    const std::size_t n = std::min(kChunk, episodes.size() - i);
    std::size_t T = 0;
    for (std::size_t b = 0; b < n; ++b) T = std::max(T, episodes[i + b].size());
    auto stepper = make(n);
    std::vector<std::vector<State>> preds(n);
    std::vector<State> s(n);
    std::vector<int> a(n);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t b = 0; b < n; ++b) {
        const auto& e = episodes[i + b];
        const std::size_t tt = std::min(t, e.size() - 1);
        s[b] = e[tt].state;
        a[b] = e[tt].action;
      }
      const std::vector<State> next = stepper.step_states(s, a);
      for (std::size_t b = 0; b < n; ++b) {
        if (t < episodes[i + b].size()) preds[b].push_back(next[b]);
      }
    }
    for (auto& p : preds) out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

struct SingleAdapter {
  DynamicsStepper st;
  std::vector<State> step_states(const std::vector<State>& s, const std::vector<int>& a) { return st.step(s, a); }
};

struct EnsembleAdapter {
  EnsembleStepper st;
  std::vector<State> step_states(const std::vector<State>& s, const std::vector<int>& a) { return st.step(s, a).mean; }
};

}  // namespace

std::vector<State> one_step_predictions(const DynamicsModel& model, const std::vector<Episode>& episodes) {
  return teacher_forced([&](std::size_t n) { return SingleAdapter{DynamicsStepper(model, n)}; }, episodes);
}

std::vector<State> one_step_predictions(const TwinEnsemble& ens, const std::vector<Episode>& episodes) {
  return teacher_forced([&](std::size_t n) { return EnsembleAdapter{EnsembleStepper(ens, n)}; }, episodes);
}

std::vector<double> multi_step_mse(const TwinEnsemble& ens, const std::vector<Episode>& episodes, std::size_t max_h,
                                   const std::vector<std::size_t>& starts) {
  std::vector<double> sse(max_h, 0.0);
  std::vector<std::size_t> count(max_h, 0);
  for (std::size_t t0 : starts) {
    std::vector<const Episode*> eligible;
    for (const auto& e : episodes) {
      if (e.size() >= t0 + max_h) eligible.push_back(&e);
    }
    if (eligible.empty()) continue;
    const std::size_t n = eligible.size();
    EnsembleStepper stepper(ens, n);
    std::vector<State> s(n), pred(n);
    std::vector<int> a(n);
    // Observed history up to and including t0.
    for (std::size_t t = 0; t <= t0; ++t) {
      for (std::size_t b = 0; b < n; ++b) {
        s[b] = (*eligible[b])[t].state;
        a[b] = (*eligible[b])[t].action;
      }
      pred = stepper.step(s, a).mean;
    }
    for (std::size_t h = 1; h <= max_h; ++h) {
      for (std::size_t b = 0; b < n; ++b) {
        const State& truth = (*eligible[b])[t0 + h - 1].next_state;
        for (std::size_t k = 0; k < kStateDim; ++k) sse[h - 1] += (pred[b][k] - truth[k]) * (pred[b][k] - truth[k]);
        count[h - 1] += kStateDim;
      }
      if (h == max_h) break;
      for (std::size_t b = 0; b < n; ++b) a[b] = (*eligible[b])[t0 + h].action;
      pred = stepper.step(pred, a).mean;
    }
  }
  std::vector<double> out(max_h, 0.0);
  for (std::size_t h = 0; h < max_h; ++h) out[h] = count[h] ? sse[h] / static_cast<double>(count[h]) : 0.0;
  return out;
}

}  // namespace twinbench::twin
