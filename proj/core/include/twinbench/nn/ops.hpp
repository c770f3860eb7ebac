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

#include "twinbench/nn/autograd.hpp"

namespace twinbench::nn {

// Differentiable operations. Matrix operands are rank-2 [rows, cols];
// row vectors (biases, gains) are rank-1.

Var constant(Tensor value);

// Elementwise, identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double c);
Var square(const Var& a);

Var relu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var gelu(const Var& x);  // tanh approximation
// Identity inside [lo, hi], saturated outside (zero gradient there).
Var clip(const Var& x, double lo, double hi);

Var matmul(const Var& a, const Var& b);
// x[N, in] * w[in, out] + b[out]
Var linear(const Var& x, const Var& w, const Var& b);
Var concat_cols(const Var& a, const Var& b);

// table[V, D] gathered at `indices` -> [N, D]
Var embedding(const Var& table, std::span<const int> indices);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

// qkv[B*T, 3*D] laid out per row as [queries | keys | values]; returns [B*T, D].
// Position t attends to positions 0..t of its own sequence only.
Var causal_self_attention(const Var& qkv, std::size_t batch, std::size_t time, std::size_t heads);

// value[N, 1], advantage[N, K] -> value + advantage - mean_k(advantage)
Var dueling_combine(const Var& value, const Var& advantage);

Var log_softmax_rows(const Var& logits);
Var softmax_rows(const Var& logits);
Var logsumexp_rows(const Var& logits);                          // [N, K] -> [N]
Var gather_cols(const Var& x, std::span<const int> indices);    // [N, K] -> [N]

Var sum(const Var& x);   // -> [1]
Var mean(const Var& x);  // -> [1]

// Losses, all returning a single-element Var.
// Mean Smooth-L1 (transition point beta) over the rows flagged valid in `row_mask`.
Var smooth_l1_masked(const Var& pred, const Tensor& target, std::span<const std::uint8_t> row_mask,
                     double beta = 1.0);
Var huber_loss(const Var& pred, const Tensor& target, double delta = 1.0);
Var l1_loss(const Var& pred, const Tensor& target);
Var mse_loss(const Var& pred, const Tensor& target);
Var cross_entropy(const Var& logits, std::span<const int> labels);
// Mean Shannon entropy (nats) of softmax(logits) rows.
Var softmax_entropy(const Var& logits);

}  // namespace twinbench::nn
