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

#include "twinbench/twin/dynamics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "twinbench/common/io.hpp"
#include "twinbench/nn/checkpoint.hpp"

namespace twinbench::twin {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;

ConstMap as_matrix(const nn::Tensor& t) {
  return ConstMap(t.ptr(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

Eigen::Map<const Eigen::RowVectorXd> as_row(const nn::Tensor& t) {
  return Eigen::Map<const Eigen::RowVectorXd>(t.ptr(), static_cast<Eigen::Index>(t.size()));
}

// Row-wise layer norm with the same arithmetic as nn::layer_norm.
void layer_norm_rows(RowMat& x, const nn::LayerNorm& ln) {
  const auto gain = as_row(ln.gain.value());
  const auto bias = as_row(ln.bias.value());
  const double d = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) mean += x(r, c);
    mean /= d;
    double var = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= d;
    const double is = 1.0 / std::sqrt(var + 1e-5);
    for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) = (x(r, c) - mean) * is * gain(c) + bias(c);
  }
}

double gelu_scalar(double v) {
  constexpr double k = 0.7978845608028654;
  return 0.5 * v * (1.0 + std::tanh(k * (v + 0.044715 * v * v * v)));
}

void affine(const RowMat& x, const nn::Dense& d, RowMat& out) {
  out.noalias() = x * as_matrix(d.weight.value());
  if (d.bias) out.rowwise() += as_row(d.bias.value());
}

}  // namespace

nlohmann::json DynamicsConfig::to_json() const {
  return {{"width", width}, {"layers", layers}, {"heads", heads}, {"ffn", ffn}, {"max_time", max_time}};
}

DynamicsConfig DynamicsConfig::from_json(const nlohmann::json& j) {
  DynamicsConfig c;
  c.width = j.at("width");
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.ffn = j.at("ffn");
  c.max_time = j.at("max_time");
  return c;
}

void SequenceBatch::validate() const {
  const std::size_t rows = batch * time;
  if (states.rank() != 2 || states.dim(0) != rows || states.dim(1) != kStateDim || actions.size() != rows ||
      mask.size() != rows || !targets.same_shape(states)) {
    throw std::invalid_argument("SequenceBatch: inconsistent shapes");
  }
  for (std::size_t b = 0; b < batch; ++b) {
    bool seen_pad = false;
    for (std::size_t t = 0; t < time; ++t) {
      const std::size_t r = b * time + t;
      if (!mask[r]) {
        seen_pad = true;
        continue;
      }
      if (seen_pad) throw std::invalid_argument("SequenceBatch: mask must be a prefix");
      for (std::size_t k = 0; k < kStateDim; ++k) {
        const double v = states.at(r, k);
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("SequenceBatch: state outside [0,1]");
      }
    }
  }
}

SequenceBatch make_batch(const std::vector<const std::vector<Transition>*>& episodes) {
  if (episodes.empty()) throw std::invalid_argument("make_batch: no episodes");
  SequenceBatch sb;
  sb.batch = episodes.size();
  for (const auto* e : episodes) {
    if (e->empty()) throw std::invalid_argument("make_batch: empty episode");
    sb.time = std::max(sb.time, e->size());
  }
  if (sb.time > kHorizon) throw std::invalid_argument("make_batch: episode longer than the horizon");
  const std::size_t rows = sb.batch * sb.time;
  sb.states = nn::Tensor({rows, kStateDim});
  sb.targets = nn::Tensor({rows, kStateDim});
  sb.actions.assign(rows, kPlacebo);
  sb.mask.assign(rows, 0);
  for (std::size_t b = 0; b < sb.batch; ++b) {
    const auto& e = *episodes[b];
    for (std::size_t t = 0; t < e.size(); ++t) {
      const std::size_t r = b * sb.time + t;
      for (std::size_t k = 0; k < kStateDim; ++k) {
        sb.states.at(r, k) = e[t].state[k];
        sb.targets.at(r, k) = e[t].next_state[k];
      }
      sb.actions[r] = e[t].action;
      sb.mask[r] = 1;
    }
    // Padding repeats the last valid state so every row stays inside [0,1].
    for (std::size_t t = e.size(); t < sb.time; ++t) {
      const std::size_t r = b * sb.time + t;
      for (std::size_t k = 0; k < kStateDim; ++k) sb.states.at(r, k) = e.back().next_state[k];
    }
  }
  return sb;
}

DynamicsModel::DynamicsModel(const DynamicsConfig& config, std::uint64_t seed) : config_(config) {
  if (config.width % config.heads != 0) throw std::invalid_argument("DynamicsModel: width must divide into heads");
  nn::Rng rng(seed);
  state_in_ = nn::Dense(kStateDim, config.width, rng);
  action_in_ = nn::Embedding(kNumActions, config.width, rng);
  positions_ = nn::sinusoidal_positions(config.max_time, config.width);
  for (std::size_t i = 0; i < config.layers; ++i) layers_.emplace_back(config.width, config.heads, config.ffn, rng);
  final_norm_ = nn::LayerNorm(config.width);
  head_ = nn::Dense(config.width, kStateDim, rng);
}

nn::Var DynamicsModel::raw_residual(const nn::Tensor& states, std::span<const int> actions, std::size_t batch,
                                    std::size_t time) const {
  const std::size_t rows = batch * time;
  if (states.rank() != 2 || states.dim(0) != rows || states.dim(1) != kStateDim || actions.size() != rows) {
    throw std::invalid_argument("DynamicsModel: histories misaligned");
  }
  if (rows == 0) throw std::invalid_argument("DynamicsModel: empty history");
  if (time > config_.max_time) throw std::invalid_argument("DynamicsModel: history longer than context window");
  for (int a : actions) {
    if (!valid_action(a)) throw std::invalid_argument("DynamicsModel: invalid action index");
  }
  if (override_) {
    nn::Tensor raw({rows, kStateDim});
    for (std::size_t r = 0; r < rows; ++r) {
      State s{};
      for (std::size_t k = 0; k < kStateDim; ++k) s[k] = states.at(r, k);
      const State f = override_(s);
      for (std::size_t k = 0; k < kStateDim; ++k) raw.at(r, k) = f[k];
    }
    return nn::constant(std::move(raw));
  }
  nn::Tensor pos({rows, config_.width});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < time; ++t) {
      std::copy_n(positions_.ptr() + t * config_.width, config_.width, pos.ptr() + (b * time + t) * config_.width);
    }
  }
  nn::Var x = nn::add(nn::add(state_in_.forward(nn::constant(states)), action_in_.forward(actions)),
                      nn::constant(std::move(pos)));
  for (const auto& layer : layers_) x = layer.forward(x, batch, time);
  return head_.forward(final_norm_.forward(x));
}

nn::Var DynamicsModel::bounded_update(const nn::Tensor& states, std::span<const int> actions, std::size_t batch,
                                      std::size_t time) const {
  nn::Var raw = raw_residual(states, actions, batch, time);
  return nn::add(nn::constant(states), nn::scale(nn::tanh(raw), kStepBound));
}

State apply_bounded_update(const State& s, const State& raw) {
  State out{};
  for (std::size_t k = 0; k < kStateDim; ++k) out[k] = std::clamp(s[k] + kStepBound * std::tanh(raw[k]), 0.0, 1.0);
  return out;
}

State DynamicsModel::predict_next(const std::vector<State>& states, const std::vector<int>& actions) const {
  if (states.empty()) throw std::invalid_argument("predict_next: empty history");
  if (states.size() != actions.size()) throw std::invalid_argument("predict_next: misaligned histories");
  for (const auto& s : states) {
    if (!valid_state(s)) throw std::invalid_argument("predict_next: state outside [0,1]");
  }
  const std::size_t T = states.size();
  nn::Tensor st({T, kStateDim});
  for (std::size_t t = 0; t < T; ++t) std::copy(states[t].begin(), states[t].end(), st.ptr() + t * kStateDim);
  nn::NoGradGuard guard;
  const nn::Tensor raw = raw_residual(st, actions, 1, T).value();
  State f{};
  for (std::size_t k = 0; k < kStateDim; ++k) f[k] = raw.at(T - 1, k);
  return apply_bounded_update(states.back(), f);
}

nn::ParamList DynamicsModel::params() const {
  nn::ParamList ps = frozen_params();
  nn::ParamList on = online_params();
  ps.insert(ps.end(), on.begin(), on.end());
  return ps;
}

nn::ParamList DynamicsModel::frozen_params() const {
  nn::ParamList ps;
  state_in_.collect("state_in", ps);
  action_in_.collect("action_in", ps);
  return ps;
}

nn::ParamList DynamicsModel::online_params() const {
  nn::ParamList ps;
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect("layers." + std::to_string(i), ps);
  final_norm_.collect("final_norm", ps);
  head_.collect("head", ps);
  return ps;
}

void DynamicsModel::save(const std::filesystem::path& path) const { nn::save_params(path, params()); }

void DynamicsModel::load(const std::filesystem::path& path) { nn::load_params(path, params()); }

DynamicsModel DynamicsModel::clone() const {
  DynamicsModel m(config_, 0);
  nn::copy_values(params(), m.params());
  m.override_ = override_;
  return m;
}

DynamicsStepper::DynamicsStepper(const DynamicsModel& model, std::size_t batch) : model_(&model), batch_(batch) {
  if (batch == 0) throw std::invalid_argument("DynamicsStepper: batch must be >= 1");
  const auto& c = model.config_;
  keys_.assign(model.layers_.size(), std::vector<std::vector<double>>(batch, std::vector<double>(c.max_time * c.width)));
  values_ = keys_;
}

std::vector<State> DynamicsStepper::step_raw(const std::vector<State>& states, const std::vector<int>& actions) {
  if (states.size() != batch_ || actions.size() != batch_) throw std::invalid_argument("DynamicsStepper: batch size mismatch");
  const auto& m = *model_;
  const auto& c = m.config_;
  if (t_ >= c.max_time) throw std::out_of_range("DynamicsStepper: context window exhausted");
  for (int a : actions) {
    if (!valid_action(a)) throw std::invalid_argument("DynamicsStepper: invalid action index");
  }
  std::vector<State> out(batch_);
  if (m.override_) {
    for (std::size_t b = 0; b < batch_; ++b) out[b] = m.override_(states[b]);
    ++t_;
    return out;
  }
  const auto B = static_cast<Eigen::Index>(batch_);
  const auto W = static_cast<Eigen::Index>(c.width);
  RowMat s(B, static_cast<Eigen::Index>(kStateDim));
  for (std::size_t b = 0; b < batch_; ++b) {
    for (std::size_t k = 0; k < kStateDim; ++k) s(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(k)) = states[b][k];
  }
  RowMat x;
  affine(s, m.state_in_, x);
  const auto& table = m.action_in_.table.value();
  for (std::size_t b = 0; b < batch_; ++b) {
    const double* e = table.ptr() + static_cast<std::size_t>(actions[b]) * c.width;
    const double* p = m.positions_.ptr() + t_ * c.width;
    for (Eigen::Index j = 0; j < W; ++j) x(static_cast<Eigen::Index>(b), j) += e[j] + p[j];
  }

  const std::size_t hd = c.width / c.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  RowMat h, qkv, attn, proj, up, down;
  std::vector<double> scores(t_ + 1);
  for (std::size_t li = 0; li < m.layers_.size(); ++li) {
    const auto& layer = m.layers_[li];
    h = x;
    layer_norm_rows(h, layer.norm1);
    affine(h, layer.attn.qkv, qkv);
    attn.setZero(B, W);
    for (std::size_t b = 0; b < batch_; ++b) {
      const auto bi = static_cast<Eigen::Index>(b);
      double* kc = keys_[li][b].data();
      double* vc = values_[li][b].data();
      for (std::size_t j = 0; j < c.width; ++j) {
        kc[t_ * c.width + j] = qkv(bi, static_cast<Eigen::Index>(c.width + j));
        vc[t_ * c.width + j] = qkv(bi, static_cast<Eigen::Index>(2 * c.width + j));
      }
      for (std::size_t hh = 0; hh < c.heads; ++hh) {
        const std::size_t off = hh * hd;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t u = 0; u <= t_; ++u) {
          double dot = 0.0;
          for (std::size_t j = 0; j < hd; ++j) dot += qkv(bi, static_cast<Eigen::Index>(off + j)) * kc[u * c.width + off + j];
          scores[u] = dot * scale;
          mx = std::max(mx, scores[u]);
        }
        double z = 0.0;
        for (std::size_t u = 0; u <= t_; ++u) {
          scores[u] = std::exp(scores[u] - mx);
          z += scores[u];
        }
        for (std::size_t u = 0; u <= t_; ++u) {
          const double p = scores[u] / z;
          for (std::size_t j = 0; j < hd; ++j) attn(bi, static_cast<Eigen::Index>(off + j)) += p * vc[u * c.width + off + j];
        }
      }
    }
    affine(attn, layer.attn.proj, proj);
    x += proj;
    h = x;
    layer_norm_rows(h, layer.norm2);
    affine(h, layer.ff.up, up);
    up = up.unaryExpr(&gelu_scalar);
    affine(up, layer.ff.down, down);
    x += down;
  }
  layer_norm_rows(x, m.final_norm_);
  RowMat raw;
  affine(x, m.head_, raw);
  for (std::size_t b = 0; b < batch_; ++b) {
    for (std::size_t k = 0; k < kStateDim; ++k) out[b][k] = raw(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(k));
  }
  ++t_;
  return out;
}

std::vector<State> DynamicsStepper::step(const std::vector<State>& states, const std::vector<int>& actions) {
  std::vector<State> raw = step_raw(states, actions);
  for (std::size_t b = 0; b < batch_; ++b) raw[b] = apply_bounded_update(states[b], raw[b]);
  return raw;
}

TwinEnsemble::TwinEnsemble(std::vector<DynamicsModel> members) : members_(std::move(members)) {
  if (members_.size() != kEnsembleSize) throw std::invalid_argument("TwinEnsemble: member count must be 5");
}

std::pair<State, State> combine_members(const std::vector<State>& preds) {
  if (preds.size() != kEnsembleSize) throw std::invalid_argument("ensemble_predict: member count must be 5");
  State mean{}, var{};
  const double n = static_cast<double>(preds.size());
  for (std::size_t k = 0; k < kStateDim; ++k) {
    // Offsets from the first member keep agreeing members exact.
    const double ref = preds.front()[k];
    double d = 0.0;
    for (const auto& p : preds) d += p[k] - ref;
    const double m = ref + d / n;
    double v = 0.0;
    for (const auto& p : preds) v += (p[k] - m) * (p[k] - m);
    mean[k] = std::clamp(m, 0.0, 1.0);
    var[k] = v / (n - 1.0);
  }
  return {mean, var};
}

std::pair<State, State> TwinEnsemble::predict(const std::vector<State>& states, const std::vector<int>& actions) const {
  if (members_.size() != kEnsembleSize) throw std::invalid_argument("ensemble_predict: member count must be 5");
  std::vector<State> preds;
  for (const auto& m : members_) preds.push_back(m.predict_next(states, actions));
  return combine_members(preds);
}

void TwinEnsemble::save(const std::filesystem::path& dir, const nlohmann::json& manifest_extra) const {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = manifest_extra.is_object() ? manifest_extra : nlohmann::json::object();
  manifest["config"] = members_.front().config().to_json();
  manifest["members"] = nlohmann::json::array();
  for (std::size_t i = 0; i < members_.size(); ++i) {
    const std::string file = "member_" + std::to_string(i) + ".tbnn";
    members_[i].save(dir / file);
    manifest["members"].push_back({{"file", file}, {"seed", i}});
  }
  write_json(dir / "manifest.json", manifest);
}

TwinEnsemble TwinEnsemble::load(const std::filesystem::path& dir) {
  const nlohmann::json manifest = read_json(dir / "manifest.json");
  const DynamicsConfig cfg = DynamicsConfig::from_json(manifest.at("config"));
  std::vector<DynamicsModel> members;
  for (const auto& m : manifest.at("members")) {
    DynamicsModel model(cfg, 0);
    model.load(dir / m.at("file").get<std::string>());
    members.push_back(std::move(model));
  }
  return TwinEnsemble(std::move(members));
}

EnsembleStepper::EnsembleStepper(const TwinEnsemble& ens, std::size_t batch) {
  if (ens.size() != kEnsembleSize) throw std::invalid_argument("EnsembleStepper: member count must be 5");
  for (const auto& m : ens.members()) steppers_.emplace_back(m, batch);
}

EnsemblePrediction EnsembleStepper::step(const std::vector<State>& states, const std::vector<int>& actions) {
  std::vector<std::vector<State>> per;
  for (auto& s : steppers_) per.push_back(s.step(states, actions));
  EnsemblePrediction out;
  out.mean.resize(states.size());
  out.variance.resize(states.size());
  std::vector<State> preds(steppers_.size());
  for (std::size_t b = 0; b < states.size(); ++b) {
    for (std::size_t i = 0; i < steppers_.size(); ++i) preds[i] = per[i][b];
    std::tie(out.mean[b], out.variance[b]) = combine_members(preds);
  }
  return out;
}

}  // namespace twinbench::twin
