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

#include "twinbench/nn/optim.hpp"

#include <cmath>

namespace twinbench::nn {

AdamW::AdamW(ParamList params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  first_.reserve(params_.size());
  second_.reserve(params_.size());
  for (const auto& p : params_) {
    first_.emplace_back(p.var.value().shape());
    second_.emplace_back(p.var.value().shape());
  }
}

StepReport AdamW::step() {
  double sq = 0.0;
  for (const auto& p : params_) {
    if (!p.var.has_grad()) throw std::logic_error("AdamW: missing gradient for parameter " + p.name);
    const Tensor& g = p.var.grad();
    if (!g.all_finite()) throw NumericalError("AdamW: non-finite gradient for parameter " + p.name);
    for (double v : g.data()) sq += v * v;
  }
  StepReport report;
  report.grad_norm = std::sqrt(sq);
  if (config_.clip_norm > 0.0 && report.grad_norm > config_.clip_norm) {
    report.clip_scale = config_.clip_norm / report.grad_norm;
  }

  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double lr = config_.learning_rate;
  const double decay = lr * config_.weight_decay;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Var v = params_[k].var;
    Tensor& w = v.mutable_value();
    Tensor& g = v.mutable_grad();
    Tensor& m = first_[k];
    Tensor& s = second_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * report.clip_scale;
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      s[i] = b2 * s[i] + (1.0 - b2) * gi * gi;
      const double mhat = m[i] / c1;
      const double shat = s[i] / c2;
      w[i] -= decay * w[i];
      w[i] -= lr * mhat / (std::sqrt(shat) + config_.eps);
    }
    g.fill(0.0);
  }
  return report;
}

bool PlateauScheduler::observe(double validation_loss, AdamW& optimizer) {
  if (validation_loss < best_) {
    best_ = validation_loss;
    bad_ = 0;
    return false;
  }
  if (++bad_ <= patience_) return false;
  bad_ = 0;
  const double next = std::max(min_lr_, optimizer.learning_rate() * factor_);
  const bool reduced = next < optimizer.learning_rate();
  optimizer.set_learning_rate(next);
  return reduced;
}

}  // namespace twinbench::nn
