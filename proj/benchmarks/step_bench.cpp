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

// Per-step costs of the online loop's hot path.

#include <benchmark/benchmark.h>

#include <random>

#include "twinbench/cohort/generator.hpp"
#include "twinbench/online/kcenter.hpp"
#include "twinbench/online/safety.hpp"
#include "twinbench/online/uncertainty.hpp"
#include "twinbench/policy/qnet.hpp"
#include "twinbench/twin/dynamics.hpp"

using namespace twinbench;

static void BM_EnsembleUncertainty(benchmark::State& st) {
  std::vector<policy::QNetwork> heads;
  for (std::uint64_t k = 0; k < 5; ++k) heads.emplace_back(k);
  Rng rng(1);
  const State s = cohort::sample_initial_state(rng);
  for (auto _ : st) {
    std::vector<ActionValues> hv;
    for (const auto& h : heads) hv.push_back(h.values(s));
    benchmark::DoNotOptimize(online::uncertainty(hv).u);
  }
}
BENCHMARK(BM_EnsembleUncertainty);

static void BM_SafetyGate(benchmark::State& st) {
  Rng rng(2);
  const State s = cohort::sample_initial_state(rng);
  int a = 0;
  for (auto _ : st) {
    benchmark::DoNotOptimize(online::safety_gate(s, a).pass);
    a = (a + 1) % 5;
  }
}
BENCHMARK(BM_SafetyGate);

static void BM_KCenter(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  Rng rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> pts(n, std::vector<double>(kStateDim));
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (double& x : pts[i]) x = u(rng);
    w[i] = u(rng);
  }
  for (auto _ : st) benchmark::DoNotOptimize(online::kcenter_select(pts, w, 20));
}
BENCHMARK(BM_KCenter)->Arg(20)->Arg(100)->Arg(500);

static void BM_TwinPredict(benchmark::State& st) {
  std::vector<twin::DynamicsModel> members;
  for (std::uint64_t k = 0; k < 5; ++k) members.emplace_back(twin::DynamicsConfig{}, k);
  const twin::TwinEnsemble ens(std::move(members));
  Rng rng(4);
  std::vector<State> hist;
  std::vector<int> acts;
  for (int t = 0; t < st.range(0); ++t) {
    hist.push_back(cohort::sample_initial_state(rng));
    acts.push_back(t % 5);
  }
  for (auto _ : st) benchmark::DoNotOptimize(ens.predict(hist, acts));
}
BENCHMARK(BM_TwinPredict)->Arg(1)->Arg(8);
BENCHMARK_MAIN();
