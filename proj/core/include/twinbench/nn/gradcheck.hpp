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

#include <functional>

#include "twinbench/nn/autograd.hpp"

namespace twinbench::nn {

// Max over coordinates of |autodiff - central difference| / (|central difference| + 1e-8).
// Throws NumericalError when any evaluation is non-finite.
double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x, double h = 1e-5);

// Same check against an existing leaf (e.g. a layer parameter) that `f` reads.
double grad_check_leaf(const std::function<Var()>& f, Var leaf, double h = 1e-5);

}  // namespace twinbench::nn
