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
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "twinbench/cohort/dataset.hpp"
#include "twinbench/deid/deid.hpp"
#include "twinbench/online/stream.hpp"
#include "twinbench/outcome/outcome.hpp"
#include "twinbench/policy/offline.hpp"
#include "twinbench/twin/train.hpp"

namespace twinbench::pipeline {

struct OfflineConfig {
  int n_patients = 2000;
  std::uint64_t seed = 0;
  deid::DeidPolicy deid;
  twin::TrainConfig twin;
  outcome::OutcomeTrainConfig outcome;
  std::vector<double> lambda_grid{0.1};
  policy::QTrainConfig q;
  std::size_t validation_starts = 200;
  std::size_t test_starts = 500;

  OfflineConfig();
};

struct DeidSummary {
  std::size_t input = 0;
  std::size_t rejected = 0;
  std::size_t suppressed = 0;
  std::size_t output = 0;
  bool k_anonymous = false;
  std::string policy_hash;

  nlohmann::json to_json() const;
};

struct OfflineArtifacts {
  DeidSummary deid;
  std::vector<Transition> rows;  // de-identified clinical payload
  cohort::Split split;
  std::vector<Transition> train;
  std::vector<Transition> validation;
  outcome::RewardNormStats stats;
  twin::TwinEnsemble twin;
  outcome::OutcomeModel outcome;
  policy::OfflinePolicy bcq;
  policy::BcqSelection selection;
  policy::QEnsemble heads;
  policy::OfflinePolicy dqn;  // single-head baseline for the online comparison
};

// Raw ingress records of a generated cohort, one per patient.
std::vector<nlohmann::json> raw_records(const cohort::Cohort& cohort);

// First state of each validation episode, up to n.
std::vector<State> validation_starts(const std::vector<Transition>& validation, std::size_t n);
// Held-out evaluation starts drawn from the initial-state sampler under a dedicated stream.
std::vector<State> test_starts(std::uint64_t seed, std::size_t n);

// generate -> de-identify -> split -> twin -> outcome -> BCQ (+ Q ensemble, DQN baseline).
OfflineArtifacts run_offline(const OfflineConfig& config, const std::filesystem::path& audit_path = {});

void save_artifacts(const OfflineArtifacts& a, const std::filesystem::path& dir);
OfflineArtifacts load_artifacts(const std::filesystem::path& dir);

// Model bundle for the stream loop; copies so the artifacts stay untouched.
online::OnlineModels online_models(const OfflineArtifacts& a, online::LoopMode mode);

// Replay pool and initial labeled rows for the standard stream protocol.
std::vector<Transition> stream_pool(const OfflineArtifacts& a, std::size_t n = 1000);

}  // namespace twinbench::pipeline
