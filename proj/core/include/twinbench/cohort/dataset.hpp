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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "twinbench/cohort/generator.hpp"

namespace twinbench::cohort {

struct CohortConfig {
  int n_patients = 2000;
  int horizon = kHorizon;
  std::uint64_t seed = 0;
  bool synthesize_identifiers = true;
  // Added to the initial age feature before clipping (drifted cohorts).
  double age_offset = 0.0;
  // Patient ids are first_patient_id, first_patient_id + 1, ...
  int first_patient_id = 0;
};

// Fabricated identifiers attached to a synthetic patient so the de-identification
// pass has something to remove.
struct RawIdentity {
  std::string mrn;
  std::string name;
  std::string phone;
  std::string zip;
  std::string birth_date;
  std::string gender;  // "F" or "M"
  int age_years = 0;
  std::vector<std::string> visit_dates;  // one per transition
};

struct PatientRecord {
  int patient_id = 0;
  std::optional<RawIdentity> identity;
  std::vector<Transition> transitions;
};

struct Cohort {
  std::vector<PatientRecord> patients;
  std::vector<Transition> transitions() const;
};

Cohort generate_cohort(const CohortConfig& config);
std::vector<Transition> rollout_behavior(const State& s0, int patient_id, int horizon, Rng& rng);

// Age feature in [0,1] maps linearly onto 18..90 years.
int age_years_from_feature(double age);

nlohmann::json transition_to_json(const Transition& t);
Transition transition_from_json(const nlohmann::json& j);
nlohmann::json state_to_json(const State& s);
State state_from_json(const nlohmann::json& j);

void write_transitions(const std::filesystem::path& path, const std::vector<Transition>& rows);
std::vector<Transition> read_transitions(const std::filesystem::path& path);

// Raw ingress record (identifiers + clinical payload) as consumed by deid.
nlohmann::json raw_record_to_json(const PatientRecord& p);

struct Split {
  std::vector<int> train;
  std::vector<int> validation;
};

// Shuffles distinct patient ids under `seed` and assigns the first 80% to train.
Split split_by_patient(std::vector<int> patient_ids, std::uint64_t seed, double train_fraction = 0.8);

std::vector<int> patient_ids(const std::vector<Transition>& rows);
std::vector<Transition> select_patients(const std::vector<Transition>& rows, const std::vector<int>& ids);
// Transitions grouped per patient, each trajectory ordered by t.
std::vector<std::vector<Transition>> episodes(const std::vector<Transition>& rows);

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::string generator_version = kGeneratorVersion;
  std::string effect_table_sha256;
  int n_patients = 0;
  std::size_t n_transitions = 0;
  Split split;
  std::string transitions_sha256;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

}  // namespace twinbench::cohort
