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

#include "twinbench/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "twinbench/nn/optim.hpp"

namespace twinbench::nn {

namespace {

double eval_scalar(const std::function<Var()>& f) {
  NoGradGuard guard;
  const double v = f().item();
  if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite function value");
  return v;
}

}  // namespace

double grad_check_leaf(const std::function<Var()>& f, Var leaf, double h) {
  leaf.zero_grad();
  Var out = f();
  if (!std::isfinite(out.item())) throw NumericalError("grad_check: non-finite function value");
  out.backward();
  const Tensor analytic = leaf.has_grad() ? leaf.grad() : Tensor::zeros_like(leaf.value());
  if (!analytic.all_finite()) throw NumericalError("grad_check: non-finite gradient");

  double worst = 0.0;
  Tensor& x = leaf.mutable_value();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = eval_scalar(f);
    x[i] = orig - h;
    const double down = eval_scalar(f);
    x[i] = orig;
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - fd) / (std::abs(fd) + 1e-8));
  }
  leaf.zero_grad();
  return worst;
}

double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x, double h) {
  Var leaf(x, true);
  return grad_check_leaf([&] { return f(leaf); }, leaf, h);
}

}  // namespace twinbench::nn
