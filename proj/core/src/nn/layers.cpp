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

#include "twinbench/nn/layers.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace twinbench::nn {

Dense::Dense(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor w({in, out});
  for (auto& v : w.data()) v = u(rng);
  weight = Var(std::move(w), true);
  if (!with_bias) return;
  Tensor b({out});
  for (auto& v : b.data()) v = u(rng);
  bias = Var(std::move(b), true);
}

void Dense::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias) out.push_back({prefix + ".bias", bias});
}

Embedding::Embedding(std::size_t vocab, std::size_t width, Rng& rng) {
  std::normal_distribution<double> n(0.0, 0.1);
  Tensor t({vocab, width});
  for (auto& v : t.data()) v = n(rng);
  table = Var(std::move(t), true);
}

void Embedding::collect(const std::string& prefix, ParamList& out) const { out.push_back({prefix + ".table", table}); }

LayerNorm::LayerNorm(std::size_t width) : gain(Tensor({width}, 1.0), true), bias(Tensor({width}, 0.0), true) {}

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

CausalSelfAttention::CausalSelfAttention(std::size_t width, std::size_t heads, Rng& rng)
    : qkv(width, 3 * width, rng, false), proj(width, width, rng), heads_(heads) {
  if (heads == 0 || width % heads != 0) throw std::invalid_argument("CausalSelfAttention: width % heads != 0");
}

Var CausalSelfAttention::forward(const Var& x, std::size_t batch, std::size_t time) const {
  return proj.forward(causal_self_attention(qkv.forward(x), batch, time, heads_));
}

void CausalSelfAttention::collect(const std::string& prefix, ParamList& out) const {
  qkv.collect(prefix + ".qkv", out);
  proj.collect(prefix + ".proj", out);
}

FeedForward::FeedForward(std::size_t width, std::size_t hidden, Rng& rng)
    : up(width, hidden, rng), down(hidden, width, rng) {}

void FeedForward::collect(const std::string& prefix, ParamList& out) const {
  up.collect(prefix + ".up", out);
  down.collect(prefix + ".down", out);
}

EncoderLayer::EncoderLayer(std::size_t width, std::size_t heads, std::size_t hidden, Rng& rng)
    : norm1(width), attn(width, heads, rng), norm2(width), ff(width, hidden, rng) {}

Var EncoderLayer::forward(const Var& x, std::size_t batch, std::size_t time) const {
  Var h = add(x, attn.forward(norm1.forward(x), batch, time));
  return add(h, ff.forward(norm2.forward(h)));
}

void EncoderLayer::collect(const std::string& prefix, ParamList& out) const {
  norm1.collect(prefix + ".norm1", out);
  attn.collect(prefix + ".attn", out);
  norm2.collect(prefix + ".norm2", out);
  ff.collect(prefix + ".ff", out);
}

DuelingHead::DuelingHead(std::size_t in, std::size_t actions, Rng& rng)
    : value(in, 1, rng), advantage(in, actions, rng) {}

Var DuelingHead::forward(const Var& features) const {
  return dueling_combine(value.forward(features), advantage.forward(features));
}

void DuelingHead::collect(const std::string& prefix, ParamList& out) const {
  value.collect(prefix + ".value", out);
  advantage.collect(prefix + ".advantage", out);
}

Tensor sinusoidal_positions(std::size_t time, std::size_t width) {
  Tensor pe({time, width});
  for (std::size_t t = 0; t < time; ++t) {
    for (std::size_t i = 0; i < width; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(width));
      pe.at(t, i) = std::sin(static_cast<double>(t) * freq);
      if (i + 1 < width) pe.at(t, i + 1) = std::cos(static_cast<double>(t) * freq);
    }
  }
  return pe;
}

std::vector<Tensor> snapshot_values(const ParamList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.var.value());
  return out;
}

void restore_values(const ParamList& params, const std::vector<Tensor>& values) {
  if (values.size() != params.size()) throw std::invalid_argument("restore_values: count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var v = params[i].var;
    if (!v.value().same_shape(values[i])) throw std::invalid_argument("restore_values: shape mismatch for " + params[i].name);
    v.mutable_value() = values[i];
  }
}

void copy_values(const ParamList& from, const ParamList& to) {
  if (from.size() != to.size()) throw std::invalid_argument("copy_values: count mismatch");
  for (std::size_t i = 0; i < from.size(); ++i) {
    Var dst = to[i].var;
    if (!dst.value().same_shape(from[i].var.value())) throw std::invalid_argument("copy_values: shape mismatch " + to[i].name);
    dst.mutable_value() = from[i].var.value();
  }
}

void zero_grads(const ParamList& params) {
  for (const auto& p : params) {
    Var v = p.var;
    v.zero_grad();
  }
}

std::size_t parameter_count(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var.value().size();
  return n;
}

std::uint64_t checksum(const ParamList& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.var.value().ptr());
    const std::size_t n = p.var.value().size() * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace twinbench::nn
