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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "twinbench/cohort/generator.hpp"
#include "twinbench/policy/offline.hpp"

using namespace twinbench;
namespace tp = twinbench::policy;

namespace {

State filled(double v) {
  State s;
  s.fill(v);
  return s;
}

ActionValues random_values(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  ActionValues v{};
  for (double& x : v) x = n(rng);
  return v;
}

}  // namespace

TEST(BcqAction, HandExample) {
  const ActionValues b{0.5, 0.3, 0.1, 0.05, 0.05};
  const ActionValues q{0, 5, 9, 99, 99};
  EXPECT_EQ(tp::supported_actions(b, 0.1), (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(tp::bcq_action(b, q, 0.1), 2);
  EXPECT_EQ(tp::bcq_action(b, q, 0.0), 3);  // vacuous constraint, lowest index among ties
  const ActionValues diffuse{0.2, 0.2, 0.21, 0.19, 0.2};
  EXPECT_EQ(tp::bcq_action(diffuse, q, 0.99), 2);
}

TEST(BcqAction, ZeroThresholdIsGreedy) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const ActionValues q = random_values(rng);
    ActionValues b = random_values(rng);
    for (double& x : b) x = std::abs(x);
    EXPECT_EQ(tp::bcq_action(b, q, 0.0), tp::greedy_action(q));
  }
}

TEST(BcqAction, PositiveAffineInvariance) {
  Rng rng(2);
  const ActionValues b{0.3, 0.05, 0.25, 0.1, 0.3};
  for (int i = 0; i < 200; ++i) {
    std::vector<ActionValues> heads(5);
    for (auto& h : heads) h = random_values(rng);
    std::vector<ActionValues> scaled = heads;
    for (auto& h : scaled) {
      for (double& x : h) x = 3.7 * x - 12.0;
    }
    EXPECT_EQ(tp::ensemble_action(heads), tp::ensemble_action(scaled));
    EXPECT_EQ(tp::bcq_action(b, heads[0], 0.1), tp::bcq_action(b, scaled[0], 0.1));
  }
}

TEST(TdTarget, Cases) {
  const ActionValues q{2.0, 3.0, 100.0, 100.0, 100.0};
  const std::vector<int> cand{0, 1};
  EXPECT_EQ(tp::td_target(1.0, true, 0.99, q, cand), 1.0);
  EXPECT_NEAR(tp::td_target(1.0, false, 0.99, q, cand), 3.97, 1e-12);
  EXPECT_EQ(tp::td_target(1.0, false, 0.0, q, cand), 1.0);
}

TEST(CandidateSet, TopNByBehavior) {
  const ActionValues b{0.1, 0.4, 0.1, 0.3, 0.1};
  EXPECT_EQ(tp::candidate_set(b, 2), (std::vector<int>{1, 3}));
  EXPECT_EQ(tp::candidate_set(b, 3), (std::vector<int>{0, 1, 3}));
  EXPECT_EQ(tp::candidate_set(b, 5).size(), 5u);
}

TEST(DoubleQ, OnlineSelectsTargetEvaluates) {
  const tp::QNetwork online(7), target(8);
  Rng rng(3);
  int crafted = 0;
  for (int i = 0; i < 500 && crafted < 20; ++i) {
    const State s = cohort::sample_initial_state(rng);
    const ActionValues o = online.values(s), t = target.values(s);
    if (tp::argmax(o) == tp::argmax(t)) continue;
    ++crafted;
    EXPECT_EQ(tp::double_q_value(o, t), t[static_cast<std::size_t>(tp::argmax(o))]);
    EXPECT_LT(tp::double_q_value(o, t), *std::max_element(t.begin(), t.end()));
  }
  EXPECT_GT(crafted, 0);
}

TEST(QNetwork, DuelingAdvantageShiftInvariance) {
  tp::QNetwork q(4);
  Rng rng(5);
  std::vector<State> xs;
  for (int i = 0; i < 16; ++i) xs.push_back(cohort::sample_initial_state(rng));
  const auto before = q.values(xs);
  for (auto& p : q.params()) {
    if (p.name.find("advantage") != std::string::npos && p.name.find("bias") != std::string::npos) {
      for (double& v : p.var.mutable_value().data()) v += 123.0;
    }
  }
  const auto after = q.values(xs);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t a = 0; a < kNumActions; ++a) EXPECT_NEAR(before[i][a], after[i][a], 1e-9);
  }
}

TEST(BehaviorModel, ProbabilitiesNormalized) {
  const tp::BehaviorModel b(6);
  Rng rng(6);
  for (int i = 0; i < 100; ++i) {
    const ActionValues p = b.probabilities(cohort::sample_initial_state(rng));
    double t = 0.0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      t += v;
    }
    EXPECT_NEAR(t, 1.0, 1e-9);
  }
}

TEST(EnsembleAction, Cases) {
  std::vector<ActionValues> same(5, ActionValues{0.1, 0.7, 0.3, 0.7, -1.0});
  EXPECT_EQ(tp::ensemble_action(same), tp::greedy_action(same[0]));
  std::vector<ActionValues> close(5, ActionValues{1.0, 1.0000001, 0.0, 0.0, 0.0});
  EXPECT_EQ(tp::ensemble_action(close), 1);

  std::vector<tp::QNetwork> heads;
  for (int k = 0; k < 5; ++k) heads.emplace_back(100 + k);
  const tp::QEnsemble ens(std::move(heads));
  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    const State s = cohort::sample_initial_state(rng);
    const auto hv = ens.head_values(s);
    ActionValues mean{};
    for (const auto& h : hv) {
      for (std::size_t a = 0; a < kNumActions; ++a) mean[a] += h[a];
    }
    int best = 0;
    for (int a = 1; a < 5; ++a) {
      if (mean[static_cast<std::size_t>(a)] > mean[static_cast<std::size_t>(best)]) best = a;
    }
    EXPECT_EQ(tp::ensemble_action(hv), best);
  }
}

TEST(TargetPair, EmaAndHardSync) {
  tp::QNetwork online(9);
  tp::TargetNetworkPair tgt(online, 0.9, 3);
  const State s = filled(0.4);
  const ActionValues start = online.values(s);
  for (auto& p : online.params()) {
    for (double& v : p.var.mutable_value().data()) v += 0.01;
  }
  tgt.update(online);
  const auto ema_after = tgt.ema().params();
  const auto live = online.params();
  for (std::size_t i = 0; i < live.size(); ++i) {
    for (std::size_t j = 0; j < live[i].var.value().size(); ++j) {
      const double expected = 0.9 * (live[i].var.value().data()[j] - 0.01) + 0.1 * live[i].var.value().data()[j];
      EXPECT_NEAR(ema_after[i].var.value().data()[j], expected, 1e-12);
    }
  }
  EXPECT_EQ(tgt.hard().values(s), start);
  tgt.update(online);
  tgt.update(online);
  EXPECT_EQ(tgt.hard().values(s), online.values(s));
  EXPECT_THROW(tgt.set_rho(1.5), std::invalid_argument);
}

TEST(Nfq, TabularToyMatchesValueIteration) {
  // A --a--> B (r = 0.1a); B --a--> C (r = 0.1(4-a)); C --a--> end (r = 1 for Placebo).
  const State A = filled(0.2), B = filled(0.5), C = filled(0.8);
  tp::OfflineData d;
  for (int a = 0; a < 5; ++a) {
    d.states.push_back(A), d.actions.push_back(a), d.rewards.push_back(0.1 * a), d.next_states.push_back(B),
        d.done.push_back(0);
    d.states.push_back(B), d.actions.push_back(a), d.rewards.push_back(0.1 * (4 - a)), d.next_states.push_back(C),
        d.done.push_back(0);
    d.states.push_back(C), d.actions.push_back(a), d.rewards.push_back(a == 4 ? 1.0 : 0.0), d.next_states.push_back(C),
        d.done.push_back(1);
  }
  tp::QTrainConfig cfg;
  cfg.gamma = 0.5;
  cfg.nfq_sweeps = 8;
  cfg.steps = 16000;
  cfg.batch_size = 15;
  cfg.learning_rate = 3e-3;
  const tp::QNetwork q = tp::train_q(tp::PolicyKind::kNfq, d, 0, cfg);
  const double vc = 1.0, vb = 0.4 + 0.5 * vc;
  for (int a = 0; a < 5; ++a) {
    const auto i = static_cast<std::size_t>(a);
    EXPECT_NEAR(q.values(C)[i], a == 4 ? 1.0 : 0.0, 1e-2) << "C," << a;
    EXPECT_NEAR(q.values(B)[i], 0.1 * (4 - a) + 0.5 * vc, 1e-2) << "B," << a;
    EXPECT_NEAR(q.values(A)[i], 0.1 * a + 0.5 * vb, 1e-2) << "A," << a;
  }
}

TEST(Bcq, DegenerateBestActionIsLearned) {
  Rng rng(10);
  tp::OfflineData d;
  for (int i = 0; i < 4000; ++i) {
    const State s = cohort::sample_initial_state(rng);
    const int a = cohort::behavior_action(s, rng);
    d.states.push_back(s);
    d.actions.push_back(a);
    d.rewards.push_back(a == kMedB ? 1.0 : -0.5);
    d.next_states.push_back(s);
    d.done.push_back(1);
  }
  tp::QTrainConfig cfg;
  cfg.steps = 3000;
  cfg.behavior_epochs = 5;
  const tp::BehaviorModel b = tp::train_behavior(d, 0, cfg);
  tp::OfflinePolicy pol;
  pol.kind = tp::PolicyKind::kBcq;
  pol.tau_supp = 0.1;
  pol.q = tp::train_q(tp::PolicyKind::kBcq, d, 0, cfg, &b, pol.tau_supp);
  pol.behavior = b.clone();
  std::vector<State> held;
  for (int i = 0; i < 500; ++i) held.push_back(cohort::sample_initial_state(rng));
  const auto acts = pol.act(held);
  const auto hits = std::count(acts.begin(), acts.end(), static_cast<int>(kMedB));
  EXPECT_GE(static_cast<double>(hits) / 500.0, 0.95);

  const auto dir = std::filesystem::temp_directory_path() / "twinbench_policy_test";
  std::filesystem::remove_all(dir);
  pol.save(dir);
  const tp::OfflinePolicy back = tp::OfflinePolicy::load(dir);
  EXPECT_EQ(back.act(held), acts);
  EXPECT_EQ(back.tau_supp, 0.1);
  EXPECT_EQ(back.kind, tp::PolicyKind::kBcq);
  std::filesystem::remove_all(dir);

  EXPECT_EQ(tp::train_q(tp::PolicyKind::kBcq, d, 0, cfg, &b, 0.1).values(held[0]), pol.q.values(held[0]));
}

TEST(Bcq, NeedsBehaviorModel) {
  tp::OfflineData d;
  d.states = {filled(0.5)};
  d.actions = {0};
  d.rewards = {0.0};
  d.next_states = {filled(0.5)};
  d.done = {1};
  EXPECT_THROW(tp::train_q(tp::PolicyKind::kBcq, d, 0, tp::QTrainConfig{}), std::invalid_argument);
  EXPECT_THROW(tp::kind_from_name("PPO"), std::invalid_argument);
  EXPECT_EQ(tp::kind_from_name(tp::kind_name(tp::PolicyKind::kCql)), tp::PolicyKind::kCql);
}
