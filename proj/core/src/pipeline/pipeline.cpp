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

#include "twinbench/pipeline/pipeline.hpp"

#include <stdexcept>

#include "twinbench/common/io.hpp"

namespace twinbench::pipeline {

OfflineConfig::OfflineConfig() {
  deid.pseudonym_salt = "twinbench-local-salt-change-me";
  twin.max_epochs = 8;
}

nlohmann::json DeidSummary::to_json() const {
  return {{"input", input},           {"rejected", rejected},       {"suppressed", suppressed},
          {"output", output},         {"k_anonymous", k_anonymous}, {"policy_hash", policy_hash}};
}

std::vector<nlohmann::json> raw_records(const cohort::Cohort& cohort) {
  std::vector<nlohmann::json> out;
  out.reserve(cohort.patients.size());
  for (const auto& p : cohort.patients) out.push_back(cohort::raw_record_to_json(p));
  return out;
}

std::vector<State> validation_starts(const std::vector<Transition>& validation, std::size_t n) {
  std::vector<State> out;
  for (const auto& e : cohort::episodes(validation)) {
    if (out.size() >= n) break;
    out.push_back(e.front().state);
  }
  return out;
}

std::vector<State> test_starts(std::uint64_t seed, std::size_t n) {
  Rng rng = derive_rng(seed, 0x54455354u);
  std::vector<State> out(n);
  for (auto& s : out) s = cohort::sample_initial_state(rng);
  return out;
}

OfflineArtifacts run_offline(const OfflineConfig& config, const std::filesystem::path& audit_path) {
  OfflineArtifacts a;
  cohort::CohortConfig cc;
  cc.n_patients = config.n_patients;
  cc.seed = config.seed;
  const cohort::Cohort cohort = cohort::generate_cohort(cc);

  std::unique_ptr<deid::AuditLog> audit;
  if (!audit_path.empty()) audit = std::make_unique<deid::AuditLog>(audit_path);
  const deid::PipelineResult dr = deid::run_pipeline(raw_records(cohort), config.deid, audit.get());
  a.deid.input = dr.input_count;
  a.deid.rejected = dr.rejected;
  a.deid.suppressed = dr.suppressed;
  a.deid.output = dr.records.size();
  a.deid.k_anonymous = dr.final_report.pass;
  a.deid.policy_hash = config.deid.hash();
  a.rows = deid::extract_transitions(dr.records);

  a.split = cohort::split_by_patient(cohort::patient_ids(a.rows), config.seed);
  a.train = cohort::select_patients(a.rows, a.split.train);
  a.validation = cohort::select_patients(a.rows, a.split.validation);
  a.stats = outcome::RewardNormStats::fit(a.train, outcome::split_fingerprint(a.split.train));

  twin::TrainConfig tc = config.twin;
  a.twin = twin::train_ensemble(cohort::episodes(a.train), cohort::episodes(a.validation), tc);
  a.outcome = outcome::select_outcome(a.train, a.validation, a.stats, config.lambda_grid, config.seed, config.outcome);

  const policy::OfflineData data = policy::make_offline_data(a.train, a.stats);
  a.bcq = policy::train_bcq(data, a.twin, a.outcome, validation_starts(a.validation, config.validation_starts),
                            config.seed, config.q, policy::kTauGrid, &a.selection);
  a.bcq.reward_stats_fingerprint = a.stats.split_fingerprint;
  a.heads = policy::train_q_ensemble(a.bcq, data, config.q);
  a.dqn = policy::train_baseline(policy::PolicyKind::kDqn, data, config.seed, config.q);
  a.dqn.reward_stats_fingerprint = a.stats.split_fingerprint;
  return a;
}

void save_artifacts(const OfflineArtifacts& a, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  cohort::write_transitions(dir / "transitions.jsonl", a.rows);
  write_json(dir / "split.json", {{"train", a.split.train}, {"validation", a.split.validation}});
  write_json(dir / "deid_summary.json", a.deid.to_json());
  a.stats.save(dir / "reward_stats.json");
  a.twin.save(dir / "twin");
  a.outcome.save(dir / "outcome");
  a.bcq.save(dir / "policy" / "bcq");
  write_json(dir / "policy" / "bcq_selection.json",
             {{"tau_supp", a.selection.tau_supp}, {"validation_returns", a.selection.validation_returns}});
  a.heads.save(dir / "policy" / "q_ensemble", {{"tau_supp", a.bcq.tau_supp}});
  a.dqn.save(dir / "policy" / "dqn");
}

OfflineArtifacts load_artifacts(const std::filesystem::path& dir) {
  OfflineArtifacts a;
  a.rows = cohort::read_transitions(dir / "transitions.jsonl");
  const nlohmann::json sp = read_json(dir / "split.json");
  a.split.train = sp.at("train").get<std::vector<int>>();
  a.split.validation = sp.at("validation").get<std::vector<int>>();
  a.train = cohort::select_patients(a.rows, a.split.train);
  a.validation = cohort::select_patients(a.rows, a.split.validation);
  if (std::filesystem::exists(dir / "deid_summary.json")) {
    const nlohmann::json d = read_json(dir / "deid_summary.json");
    a.deid.input = d.value("input", std::size_t{0});
    a.deid.rejected = d.value("rejected", std::size_t{0});
    a.deid.suppressed = d.value("suppressed", std::size_t{0});
    a.deid.output = d.value("output", std::size_t{0});
    a.deid.k_anonymous = d.value("k_anonymous", false);
    a.deid.policy_hash = d.value("policy_hash", std::string());
  }
  a.stats = outcome::RewardNormStats::load(dir / "reward_stats.json");
  a.twin = twin::TwinEnsemble::load(dir / "twin");
  a.outcome = outcome::OutcomeModel::load(dir / "outcome");
  a.bcq = policy::OfflinePolicy::load(dir / "policy" / "bcq");
  const nlohmann::json sel = read_json(dir / "policy" / "bcq_selection.json");
  a.selection.tau_supp = sel.at("tau_supp");
  a.selection.validation_returns = sel.at("validation_returns").get<std::vector<double>>();
  a.heads = policy::QEnsemble::load(dir / "policy" / "q_ensemble");
  a.dqn = policy::OfflinePolicy::load(dir / "policy" / "dqn");
  return a;
}

online::OnlineModels online_models(const OfflineArtifacts& a, online::LoopMode mode) {
  if (!a.bcq.behavior) throw std::invalid_argument("online_models: BCQ policy has no behavior model");
  std::vector<twin::DynamicsModel> members;
  for (const auto& m : a.twin.members()) members.push_back(m.clone());
  online::OnlineModels m{twin::TwinEnsemble(std::move(members)), a.outcome.clone(), {}, a.bcq.behavior->clone()};
  if (mode == online::LoopMode::kEnsemble) {
    for (const auto& h : a.heads.heads()) m.heads.push_back(h.clone());
  } else {
    m.heads.push_back(a.dqn.q.clone());
  }
  return m;
}

std::vector<Transition> stream_pool(const OfflineArtifacts& a, std::size_t n) {
  if (a.train.size() < n) throw std::invalid_argument("stream_pool: training split smaller than the replay pool");
  return {a.train.begin(), a.train.begin() + static_cast<std::ptrdiff_t>(n)};
}

}  // namespace twinbench::pipeline
