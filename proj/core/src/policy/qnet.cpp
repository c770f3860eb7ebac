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

#include "twinbench/policy/qnet.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "twinbench/common/io.hpp"
#include "twinbench/nn/checkpoint.hpp"

namespace twinbench::policy {

nn::Tensor states_tensor(const std::vector<State>& states) {
  nn::Tensor t({states.size(), kStateDim});
  for (std::size_t i = 0; i < states.size(); ++i) std::copy(states[i].begin(), states[i].end(), t.ptr() + i * kStateDim);
  return t;
}

namespace {

std::vector<ActionValues> rows_of(const nn::Tensor& t) {
  std::vector<ActionValues> out(t.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) std::copy_n(t.ptr() + i * kNumActions, kNumActions, out[i].begin());
  return out;
}

}  // namespace

QNetwork::QNetwork(std::uint64_t seed, std::size_t hidden) : hidden_(hidden) {
  nn::Rng rng(seed);
  l1_ = nn::Dense(kStateDim, hidden, rng);
  l2_ = nn::Dense(hidden, hidden, rng);
  head_ = nn::DuelingHead(hidden, kNumActions, rng);
}

nn::Var QNetwork::forward(const nn::Tensor& states) const {
  return head_.forward(nn::relu(l2_.forward(nn::relu(l1_.forward(nn::constant(states))))));
}

std::vector<ActionValues> QNetwork::values(const std::vector<State>& states) const {
  if (states.empty()) return {};
  nn::NoGradGuard guard;
  return rows_of(forward(states_tensor(states)).value());
}

ActionValues QNetwork::values(const State& s) const { return values(std::vector<State>{s}).front(); }

nn::ParamList QNetwork::params() const {
  nn::ParamList ps;
  l1_.collect("trunk1", ps);
  l2_.collect("trunk2", ps);
  head_.collect("dueling", ps);
  return ps;
}

QNetwork QNetwork::clone() const {
  QNetwork q(0, hidden_);
  nn::copy_values(params(), q.params());
  return q;
}

BehaviorModel::BehaviorModel(std::uint64_t seed, std::size_t hidden) : hidden_(hidden) {
  nn::Rng rng(seed);
  l1_ = nn::Dense(kStateDim, hidden, rng);
  l2_ = nn::Dense(hidden, kNumActions, rng);
}

nn::Var BehaviorModel::logits(const nn::Tensor& states) const {
  return l2_.forward(nn::relu(l1_.forward(nn::constant(states))));
}

std::vector<ActionValues> BehaviorModel::probabilities(const std::vector<State>& states) const {
  if (states.empty()) return {};
  nn::NoGradGuard guard;
  return rows_of(nn::softmax_rows(logits(states_tensor(states))).value());
}

ActionValues BehaviorModel::probabilities(const State& s) const {
  return probabilities(std::vector<State>{s}).front();
}

nn::ParamList BehaviorModel::params() const {
  nn::ParamList ps;
  l1_.collect("behavior1", ps);
  l2_.collect("behavior2", ps);
  return ps;
}

BehaviorModel BehaviorModel::clone() const {
  BehaviorModel b(0, hidden_);
  nn::copy_values(params(), b.params());
  return b;
}

int argmax(const ActionValues& v) {
  int best = 0;
  for (int a = 1; a < static_cast<int>(kNumActions); ++a) {
    if (v[a] > v[best]) best = a;
  }
  return best;
}

int greedy_action(const ActionValues& q) { return argmax(q); }

std::vector<int> supported_actions(const ActionValues& behavior, double tau_supp) {
  std::vector<int> out;
  for (int a = 0; a < static_cast<int>(kNumActions); ++a) {
    if (behavior[a] >= tau_supp) out.push_back(a);
  }
  return out;
}

int bcq_action(const ActionValues& behavior, const ActionValues& q, double tau_supp) {
  if (!(tau_supp >= 0.0 && tau_supp < 1.0)) throw std::invalid_argument("bcq_action: tau_supp must be in [0,1)");
  const std::vector<int> valid = supported_actions(behavior, tau_supp);
  if (valid.empty()) return argmax(behavior);
  int best = valid.front();
  for (int a : valid) {
    if (q[a] > q[best]) best = a;
  }
  return best;
}

std::vector<int> candidate_set(const ActionValues& behavior, std::size_t n) {
  if (n < 1 || n > kNumActions) throw std::invalid_argument("candidate_set: n must be in [1,5]");
  std::vector<int> order(kNumActions);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return behavior[a] > behavior[b]; });
  order.resize(n);
  std::sort(order.begin(), order.end());
  return order;
}

double double_q_value(const ActionValues& online_next, const ActionValues& target_next) {
  return target_next[static_cast<std::size_t>(argmax(online_next))];
}

double td_target(double reward, bool terminal, double gamma, const ActionValues& min_target_q,
                 std::span<const int> candidates) {
  if (terminal) return reward;
  if (candidates.empty()) throw std::invalid_argument("td_target: empty candidate set");
  double best = min_target_q[candidates.front()];
  for (int a : candidates) best = std::max(best, min_target_q[a]);
  return reward + gamma * best;
}

TargetNetworkPair::TargetNetworkPair(const QNetwork& online, double rho, std::size_t sync_every)
    : ema_(online.clone()), hard_(online.clone()), sync_every_(sync_every) {
  set_rho(rho);
  if (sync_every == 0) throw std::invalid_argument("TargetNetworkPair: sync_every must be >= 1");
}

void TargetNetworkPair::set_rho(double rho) {
  if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("TargetNetworkPair: rho must be in [0,1)");
  rho_ = rho;
}

void TargetNetworkPair::update(const QNetwork& online) {
  const nn::ParamList src = online.params();
  const nn::ParamList dst = ema_.params();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const nn::Tensor& s = src[i].var.value();
    nn::Tensor& d = dst[i].var.node()->value;
    for (std::size_t j = 0; j < d.size(); ++j) d[j] = rho_ * d[j] + (1.0 - rho_) * s[j];
  }
  ++updates_;
  if (updates_ % sync_every_ == 0) hard_sync(online);
}

void TargetNetworkPair::hard_sync(const QNetwork& online) { nn::copy_values(online.params(), hard_.params()); }

std::vector<ActionValues> TargetNetworkPair::min_values(const nn::Tensor& states) const {
  nn::NoGradGuard guard;
  const nn::Tensor a = ema_.forward(states).value();
  const nn::Tensor b = hard_.forward(states).value();
  std::vector<ActionValues> out(states.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t k = 0; k < kNumActions; ++k) out[i][k] = std::min(a.at(i, k), b.at(i, k));
  }
  return out;
}

std::vector<ActionValues> TargetNetworkPair::min_values(const std::vector<State>& states) const {
  if (states.empty()) return {};
  return min_values(states_tensor(states));
}

QEnsemble::QEnsemble(std::vector<QNetwork> heads) : heads_(std::move(heads)) {
  if (heads_.size() != kQEnsembleSize) throw std::invalid_argument("QEnsemble: exactly 5 heads required");
  for (const auto& h : heads_) {
    if (h.hidden() != heads_.front().hidden()) throw std::invalid_argument("QEnsemble: heads differ in architecture");
  }
}

std::vector<std::vector<ActionValues>> QEnsemble::head_values(const std::vector<State>& states) const {
  std::vector<std::vector<ActionValues>> out;
  out.reserve(heads_.size());
  for (const auto& h : heads_) out.push_back(h.values(states));
  return out;
}

std::vector<ActionValues> QEnsemble::head_values(const State& s) const {
  std::vector<ActionValues> out;
  for (const auto& h : heads_) out.push_back(h.values(s));
  return out;
}

void QEnsemble::save(const std::filesystem::path& dir, const nlohmann::json& manifest_extra) const {
  std::filesystem::create_directories(dir);
  nlohmann::json m = manifest_extra.is_object() ? manifest_extra : nlohmann::json::object();
  m["kind"] = "q-ensemble";
  m["hidden"] = heads_.front().hidden();
  m["heads"] = nlohmann::json::array();
  for (std::size_t k = 0; k < heads_.size(); ++k) {
    const std::string name = "head_" + std::to_string(k) + ".tbnn";
    nn::save_params(dir / name, heads_[k].params());
    m["heads"].push_back(name);
  }
  write_json(dir / "manifest.json", m);
}

QEnsemble QEnsemble::load(const std::filesystem::path& dir) {
  const nlohmann::json m = read_json(dir / "manifest.json");
  if (m.at("kind") != "q-ensemble") throw std::runtime_error("not a Q-ensemble checkpoint: " + dir.string());
  std::vector<QNetwork> heads;
  for (const auto& name : m.at("heads")) {
    QNetwork q(0, m.at("hidden").get<std::size_t>());
    nn::load_params(dir / name.get<std::string>(), q.params());
    heads.push_back(std::move(q));
  }
  return QEnsemble(std::move(heads));
}

ActionValues mean_values(const std::vector<ActionValues>& head_values) {
  if (head_values.empty()) throw std::invalid_argument("mean_values: no heads");
  ActionValues m{};
  for (const auto& h : head_values) {
    for (std::size_t a = 0; a < kNumActions; ++a) m[a] += h[a];
  }
  for (auto& v : m) v /= static_cast<double>(head_values.size());
  return m;
}

int ensemble_action(const std::vector<ActionValues>& head_values) { return argmax(mean_values(head_values)); }

}  // namespace twinbench::policy
