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
#include <random>
#include <span>
#include <string>
#include <vector>

#include "twinbench/nn/ops.hpp"

namespace twinbench::nn {

struct NamedVar {
  std::string name;
  Var var;
};
using ParamList = std::vector<NamedVar>;

using Rng = std::mt19937_64;

class Dense {
 public:
  Dense() = default;
  Dense(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

  Var forward(const Var& x) const { return bias ? linear(x, weight, bias) : matmul(x, weight); }
  void collect(const std::string& prefix, ParamList& out) const;
  std::size_t in_features() const { return weight.value().dim(0); }
  std::size_t out_features() const { return weight.value().dim(1); }

  Var weight;  // [in, out]
  Var bias;    // [out], absent for bias-free projections
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(std::size_t vocab, std::size_t width, Rng& rng);

  Var forward(std::span<const int> indices) const { return embedding(table, indices); }
  void collect(const std::string& prefix, ParamList& out) const;

  Var table;  // [vocab, width]
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t width);

  Var forward(const Var& x) const { return layer_norm(x, gain, bias); }
  void collect(const std::string& prefix, ParamList& out) const;

  Var gain;
  Var bias;
};

class CausalSelfAttention {
 public:
  CausalSelfAttention() = default;
  CausalSelfAttention(std::size_t width, std::size_t heads, Rng& rng);

  // x: [batch * time, width] -> [batch * time, width]
  Var forward(const Var& x, std::size_t batch, std::size_t time) const;
  void collect(const std::string& prefix, ParamList& out) const;
  std::size_t heads() const { return heads_; }

  Dense qkv;
  Dense proj;

 private:
  std::size_t heads_ = 1;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(std::size_t width, std::size_t hidden, Rng& rng);

  Var forward(const Var& x) const { return down.forward(gelu(up.forward(x))); }
  void collect(const std::string& prefix, ParamList& out) const;

  Dense up;
  Dense down;
};

// Pre-norm transformer encoder block with causal self-attention.
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(std::size_t width, std::size_t heads, std::size_t hidden, Rng& rng);

  Var forward(const Var& x, std::size_t batch, std::size_t time) const;
  void collect(const std::string& prefix, ParamList& out) const;

  LayerNorm norm1;
  CausalSelfAttention attn;
  LayerNorm norm2;
  FeedForward ff;
};

// State-value and advantage streams combined with mean-advantage subtraction.
class DuelingHead {
 public:
  DuelingHead() = default;
  DuelingHead(std::size_t in, std::size_t actions, Rng& rng);

  Var forward(const Var& features) const;
  void collect(const std::string& prefix, ParamList& out) const;

  Dense value;
  Dense advantage;
};

// Sinusoidal position table [time, width]; fixed, not trainable.
Tensor sinusoidal_positions(std::size_t time, std::size_t width);

// Parameter utilities.
std::vector<Tensor> snapshot_values(const ParamList& params);
void restore_values(const ParamList& params, const std::vector<Tensor>& values);
void copy_values(const ParamList& from, const ParamList& to);
void zero_grads(const ParamList& params);
std::size_t parameter_count(const ParamList& params);
// FNV-1a over the raw bytes of every tensor, in list order.
std::uint64_t checksum(const ParamList& params);

}  // namespace twinbench::nn
