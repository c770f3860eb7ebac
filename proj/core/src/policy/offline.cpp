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

#include "twinbench/policy/offline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "twinbench/common/io.hpp"
#include "twinbench/eval/metrics.hpp"
#include "twinbench/nn/checkpoint.hpp"
#include "twinbench/nn/optim.hpp"
#include "twinbench/online/safety.hpp"

namespace twinbench::policy {

std::string kind_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::kBcq: return "BCQ";
    case PolicyKind::kDqn: return "DQN";
    case PolicyKind::kDoubleDqn: return "DoubleDQN";
    case PolicyKind::kNfq: return "NFQ";
    case PolicyKind::kCql: return "CQL";
  }
  throw std::invalid_argument("kind_name: unknown policy kind");
}

PolicyKind kind_from_name(const std::string& name) {
  for (PolicyKind k : {PolicyKind::kBcq, PolicyKind::kDqn, PolicyKind::kDoubleDqn, PolicyKind::kNfq, PolicyKind::kCql}) {
    if (kind_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown policy kind: " + name);
}

OfflineData make_offline_data(const std::vector<Transition>& rows, const outcome::RewardNormStats& stats) {
  if (rows.empty()) throw std::invalid_argument("make_offline_data: no transitions");
  OfflineData d;
  d.states.reserve(rows.size());
  for (const auto& t : rows) {
    d.states.push_back(t.state);
    d.actions.push_back(t.action);
    d.rewards.push_back(stats.normalize(t.reward));
    d.next_states.push_back(t.next_state);
    d.done.push_back(t.done ? 1 : 0);
  }
  return d;
}

namespace {

nn::Tensor gather_states(const std::vector<State>& src, std::span<const std::size_t> idx) {
  nn::Tensor t({idx.size(), kStateDim});
  for (std::size_t j = 0; j < idx.size(); ++j) std::copy(src[idx[j]].begin(), src[idx[j]].end(), t.ptr() + j * kStateDim);
  return t;
}

nn::AdamW make_optimizer(const nn::ParamList& ps, double lr) {
  nn::AdamWConfig cfg;
  cfg.learning_rate = lr;
  return nn::AdamW(ps, cfg);
}

// Per-next-state candidate sets for the BCQ target.
std::vector<std::vector<int>> bcq_candidates(const OfflineData& data, const BehaviorModel& behavior, double tau,
                                             std::size_t n) {
  const std::vector<ActionValues> probs = behavior.probabilities(data.next_states);
  std::vector<std::vector<int>> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    for (int a : candidate_set(probs[i], n)) {
      if (probs[i][a] >= tau) out[i].push_back(a);
    }
    if (out[i].empty()) out[i].push_back(argmax(probs[i]));
  }
  return out;
}

// Fitted Q-iteration: each sweep freezes the network, recomputes every target over the
// full batch, then refits.
QNetwork train_nfq(const OfflineData& data, std::uint64_t seed, const QTrainConfig& cfg, QTrainReport* report) {
  QNetwork q(seed, cfg.hidden);
  const nn::ParamList ps = q.params();
  nn::AdamW opt = make_optimizer(ps, cfg.learning_rate);
  nn::Rng rng(seed ^ 0x4e4651u);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t sweeps = std::max<std::size_t>(1, cfg.nfq_sweeps);
  const std::size_t steps_per_sweep = std::max<std::size_t>(1, cfg.steps / sweeps);
  QTrainReport rep;
  std::vector<nn::Tensor> stable = nn::snapshot_values(ps);
  std::vector<double> y(data.size());
  for (std::size_t sweep = 0; sweep < sweeps && !rep.diverged; ++sweep) {
    const std::vector<ActionValues> next_q = q.values(data.next_states);
    for (std::size_t i = 0; i < data.size(); ++i) {
      y[i] = data.done[i] ? data.rewards[i]
                          : data.rewards[i] + cfg.gamma * *std::max_element(next_q[i].begin(), next_q[i].end());
    }
    double window = 0.0;
    std::size_t cursor = order.size();
    for (std::size_t s = 0; s < steps_per_sweep; ++s) {
      if (cursor + cfg.batch_size > order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const std::size_t n = std::min(cfg.batch_size, order.size());
      std::span<const std::size_t> idx(order.data() + cursor, n);
      cursor += n;
      nn::Tensor target({n});
      std::vector<int> acts(n);
      for (std::size_t j = 0; j < n; ++j) {
        target[j] = y[idx[j]];
        acts[j] = data.actions[idx[j]];
      }
      nn::Var loss = nn::huber_loss(nn::gather_cols(q.forward(gather_states(data.states, idx)), acts), target,
                                    cfg.huber_delta);
      if (!std::isfinite(loss.item())) {
        nn::restore_values(ps, stable);
        rep.diverged = true;
        break;
      }
      loss.backward();
      opt.step();
      window += loss.item();
      ++rep.steps_run;
    }
    if (!rep.diverged) {
      stable = nn::snapshot_values(ps);
      rep.loss.push_back(window / static_cast<double>(steps_per_sweep));
    }
  }
  if (report) *report = rep;
  return q;
}

}  // namespace

BehaviorModel train_behavior(const OfflineData& data, std::uint64_t seed, const QTrainConfig& cfg) {
  BehaviorModel b(seed ^ 0xb3u, cfg.hidden);
  const nn::ParamList ps = b.params();
  nn::AdamW opt = make_optimizer(ps, cfg.learning_rate);
  nn::Rng rng(seed ^ 0xb4u);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  constexpr std::size_t kBatch = 256;
  for (std::size_t e = 0; e < cfg.behavior_epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); i += kBatch) {
      const std::size_t n = std::min(kBatch, order.size() - i);
      std::span<const std::size_t> idx(order.data() + i, n);
      std::vector<int> acts(n);
      for (std::size_t j = 0; j < n; ++j) acts[j] = data.actions[idx[j]];
      nn::Var loss = nn::cross_entropy(b.logits(gather_states(data.states, idx)), acts);
      if (!std::isfinite(loss.item())) throw nn::NumericalError("train_behavior: loss is not finite");
      loss.backward();
      opt.step();
    }
  }
  return b;
}

QNetwork train_q(PolicyKind kind, const OfflineData& data, std::uint64_t seed, const QTrainConfig& cfg,
                 const BehaviorModel* behavior, double tau_supp, QTrainReport* report) {
  if (data.size() == 0) throw std::invalid_argument("train_q: empty data");
  if (cfg.batch_size == 0 || cfg.steps == 0) throw std::invalid_argument("train_q: batch size and steps must be >= 1");
  if (kind == PolicyKind::kNfq) return train_nfq(data, seed, cfg, report);
  if (kind == PolicyKind::kBcq && behavior == nullptr) throw std::invalid_argument("train_q: BCQ needs a behavior model");

  QNetwork q(seed, cfg.hidden);
  const nn::ParamList ps = q.params();
  nn::AdamW opt = make_optimizer(ps, cfg.learning_rate);
  TargetNetworkPair targets(q, cfg.rho, cfg.sync_every);
  std::vector<std::vector<int>> candidates;
  if (kind == PolicyKind::kBcq) candidates = bcq_candidates(data, *behavior, tau_supp, cfg.candidate_n);

  nn::Rng rng(seed ^ 0x51u);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  const std::size_t n = cfg.batch_size;
  std::vector<std::size_t> idx(n);
  std::vector<int> acts(n);
  nn::Tensor y({n});
  QTrainReport rep;
  std::vector<nn::Tensor> stable = nn::snapshot_values(ps);
  double window = 0.0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t j = 0; j < n; ++j) {
      idx[j] = pick(rng);
      acts[j] = data.actions[idx[j]];
    }
    const nn::Tensor next = gather_states(data.next_states, idx);
    if (kind == PolicyKind::kBcq) {
      const std::vector<ActionValues> mq = targets.min_values(next);
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t i = idx[j];
        y[j] = td_target(data.rewards[i], data.done[i] != 0, cfg.gamma, mq[j], candidates[i]);
      }
    } else {
      nn::NoGradGuard guard;
      const nn::Tensor tq = targets.hard().forward(next).value();
      nn::Tensor oq;
      if (kind == PolicyKind::kDoubleDqn) oq = q.forward(next).value();
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t i = idx[j];
        if (data.done[i]) {
          y[j] = data.rewards[i];
          continue;
        }
        ActionValues row{};
        for (std::size_t a = 0; a < kNumActions; ++a) row[a] = tq.at(j, a);
        double next_v;
        if (kind == PolicyKind::kDoubleDqn) {
          ActionValues online{};
          for (std::size_t a = 0; a < kNumActions; ++a) online[a] = oq.at(j, a);
          next_v = double_q_value(online, row);
        } else {
          next_v = *std::max_element(row.begin(), row.end());
        }
        y[j] = data.rewards[i] + cfg.gamma * next_v;
      }
    }
    nn::Var qs = q.forward(gather_states(data.states, idx));
    nn::Var loss = nn::huber_loss(nn::gather_cols(qs, acts), y, cfg.huber_delta);
    if (kind == PolicyKind::kCql) {
      nn::Var gap = nn::mean(nn::sub(nn::logsumexp_rows(qs), nn::gather_cols(qs, acts)));
      loss = nn::add(loss, nn::scale(gap, cfg.cql_alpha));
    }
    if (!std::isfinite(loss.item())) {
      nn::restore_values(ps, stable);
      rep.diverged = true;
      break;
    }
    loss.backward();
    opt.step();
    if (kind == PolicyKind::kBcq) {
      targets.update(q);
    } else if ((step + 1) % cfg.sync_every == 0) {
      targets.hard_sync(q);
    }
    window += loss.item();
    ++rep.steps_run;
    if (rep.steps_run % cfg.snapshot_every == 0) {
      stable = nn::snapshot_values(ps);
      rep.loss.push_back(window / static_cast<double>(cfg.snapshot_every));
      window = 0.0;
    }
  }
  if (report) *report = rep;
  return q;
}

std::vector<int> OfflinePolicy::act(const std::vector<State>& states) const {
  const std::vector<ActionValues> qv = q.values(states);
  std::vector<int> out(states.size());
  if (kind == PolicyKind::kBcq) {
    if (!behavior) throw std::logic_error("OfflinePolicy: BCQ without behavior model");
    const std::vector<ActionValues> bv = behavior->probabilities(states);
    for (std::size_t i = 0; i < states.size(); ++i) out[i] = bcq_action(bv[i], qv[i], tau_supp);
  } else {
    for (std::size_t i = 0; i < states.size(); ++i) out[i] = greedy_action(qv[i]);
  }
  return out;
}

twin::PolicyFn OfflinePolicy::fn() const {
  return [this](const std::vector<State>& s) { return act(s); };
}

void OfflinePolicy::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nn::save_params(dir / "q.tbnn", q.params());
  nlohmann::json m{{"kind", kind_name(kind)}, {"tau_supp", tau_supp},   {"gamma", gamma},
                   {"hidden", q.hidden()},    {"seed", seed},           {"reward_stats_fingerprint", reward_stats_fingerprint},
                   {"checkpoint", "q.tbnn"}};
  if (behavior) {
    nn::save_params(dir / "behavior.tbnn", behavior->params());
    m["behavior_checkpoint"] = "behavior.tbnn";
  }
  write_json(dir / "manifest.json", m);
}

OfflinePolicy OfflinePolicy::load(const std::filesystem::path& dir) {
  const nlohmann::json m = read_json(dir / "manifest.json");
  OfflinePolicy p;
  p.kind = kind_from_name(m.at("kind"));
  p.tau_supp = m.at("tau_supp");
  p.gamma = m.at("gamma");
  p.seed = m.at("seed");
  p.reward_stats_fingerprint = m.at("reward_stats_fingerprint");
  const auto hidden = m.at("hidden").get<std::size_t>();
  p.q = QNetwork(0, hidden);
  nn::load_params(dir / m.at("checkpoint").get<std::string>(), p.q.params());
  if (m.contains("behavior_checkpoint")) {
    p.behavior = BehaviorModel(0, hidden);
    nn::load_params(dir / m.at("behavior_checkpoint").get<std::string>(), p.behavior->params());
  } else if (p.kind == PolicyKind::kBcq) {
    throw std::runtime_error("BCQ checkpoint without behavior model: " + dir.string());
  }
  return p;
}

nlohmann::json PolicyEvaluation::to_json() const {
  return {{"mean_return", mean_return}, {"std_return", std_return}, {"sharpe_like", sharpe},
          {"action_entropy", action_entropy}, {"gate_pass_rate", gate_pass_rate},
          {"return_ci95", {ci_lo, ci_hi}}, {"action_share", action_share}, {"episodes", returns.size()}};
}

PolicyEvaluation evaluate_policy(const twin::TwinEnsemble& ens, const outcome::OutcomeModel& outcome,
                                 const twin::PolicyFn& policy, const std::vector<State>& initial_states, double gamma,
                                 std::uint64_t bootstrap_seed, int bootstrap_resamples) {
  if (initial_states.size() < 2) throw std::invalid_argument("evaluate_policy: need at least two episodes");
  std::size_t proposals = 0, passed = 0;
  const twin::PolicyFn gated = [&](const std::vector<State>& states) {
    std::vector<int> a = policy(states);
    for (std::size_t i = 0; i < a.size() && i < states.size(); ++i) {
      ++proposals;
      if (online::safety_gate(states[i], a[i]).pass) ++passed;
    }
    return a;
  };
  const std::vector<twin::Trajectory> trajs = twin::rollout(ens, outcome, gated, initial_states, kHorizon);
  PolicyEvaluation ev;
  std::vector<int> actions;
  for (const auto& tr : trajs) {
    ev.returns.push_back(eval::discounted_return(tr.rewards, gamma));
    actions.insert(actions.end(), tr.actions.begin(), tr.actions.end());
  }
  ev.mean_return = eval::mean(ev.returns);
  ev.std_return = eval::sample_std(ev.returns);
  ev.sharpe = ev.std_return > 0.0 ? ev.mean_return / ev.std_return : std::numeric_limits<double>::infinity();
  ev.action_entropy = eval::action_entropy(actions);
  ev.gate_pass_rate = proposals ? static_cast<double>(passed) / static_cast<double>(proposals) : 1.0;
  const eval::Interval ci = eval::bootstrap_mean_ci(ev.returns, bootstrap_seed, bootstrap_resamples);
  ev.ci_lo = ci.lo;
  ev.ci_hi = ci.hi;
  for (int a : actions) ev.action_share[a] += 1.0 / static_cast<double>(actions.size());
  return ev;
}

OfflinePolicy train_bcq(const OfflineData& data, const twin::TwinEnsemble& ens, const outcome::OutcomeModel& outcome,
                        const std::vector<State>& validation_starts, std::uint64_t seed, const QTrainConfig& config,
                        const std::vector<double>& grid, BcqSelection* selection) {
  if (grid.empty()) throw std::invalid_argument("train_bcq: empty tau grid");
  const BehaviorModel behavior = train_behavior(data, seed, config);
  OfflinePolicy best;
  double best_return = -std::numeric_limits<double>::infinity();
  BcqSelection sel;
  for (double tau : grid) {
    OfflinePolicy p;
    p.kind = PolicyKind::kBcq;
    p.q = train_q(PolicyKind::kBcq, data, seed, config, &behavior, tau);
    p.behavior = behavior.clone();
    p.tau_supp = tau;
    p.gamma = config.gamma;
    p.seed = seed;
    const double r = evaluate_policy(ens, outcome, p.fn(), validation_starts, config.gamma, seed, 1).mean_return;
    sel.validation_returns.push_back(r);
    if (r > best_return) {
      best_return = r;
      best = std::move(p);
      sel.tau_supp = tau;
    }
  }
  if (selection) *selection = sel;
  return best;
}

OfflinePolicy train_baseline(PolicyKind kind, const OfflineData& data, std::uint64_t seed, const QTrainConfig& config) {
  if (kind == PolicyKind::kBcq) throw std::invalid_argument("train_baseline: use train_bcq for BCQ");
  OfflinePolicy p;
  p.kind = kind;
  p.q = train_q(kind, data, seed, config);
  p.gamma = config.gamma;
  p.seed = seed;
  return p;
}

QEnsemble train_q_ensemble(const OfflinePolicy& bcq, const OfflineData& data, const QTrainConfig& config) {
  if (bcq.kind != PolicyKind::kBcq || !bcq.behavior) throw std::invalid_argument("train_q_ensemble: needs a BCQ policy");
  std::vector<QNetwork> heads;
  heads.push_back(bcq.q.clone());
  for (std::size_t k = 1; k < kQEnsembleSize; ++k) {
    Rng r = derive_rng(bcq.seed, 0xB0075u, k);
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    OfflineData boot;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::size_t j = pick(r);
      boot.states.push_back(data.states[j]);
      boot.actions.push_back(data.actions[j]);
      boot.rewards.push_back(data.rewards[j]);
      boot.next_states.push_back(data.next_states[j]);
      boot.done.push_back(data.done[j]);
    }
    heads.push_back(train_q(PolicyKind::kBcq, boot, bcq.seed + 7919 * k, config, &*bcq.behavior, bcq.tau_supp));
  }
  return QEnsemble(std::move(heads));
}

}  // namespace twinbench::policy
