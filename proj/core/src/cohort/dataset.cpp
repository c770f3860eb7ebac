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

#include "twinbench/cohort/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>

#include "twinbench/common/dates.hpp"
#include "twinbench/common/io.hpp"

namespace twinbench::cohort {

namespace {

constexpr std::uint64_t kStreamPatient = 0x11;
constexpr std::uint64_t kStreamIdentity = 0x12;

constexpr const char* kFirstNames[] = {"Avery", "Blake", "Casey", "Devon", "Emery", "Finley", "Harper", "Jordan",
                                       "Kendall", "Logan", "Morgan", "Quinn", "Reese", "Rowan", "Sawyer", "Tatum"};
constexpr const char* kLastNames[] = {"Abernathy", "Becket", "Calloway", "Dunmore", "Ellery", "Fairbanks",
                                      "Galloway", "Hollis", "Iverson", "Jessup", "Kincaid", "Lockhart",
                                      "Merriweather", "Northcott", "Ortega", "Pemberton"};
constexpr const char* kZip3[] = {"021", "100", "303", "606", "941", "981"};

RawIdentity make_identity(int patient_id, std::uint64_t seed, double age_feature, double gender_feature,
                          std::size_t n_visits) {
  Rng rng = derive_rng(seed, kStreamIdentity, static_cast<std::uint64_t>(patient_id));
  std::uniform_int_distribution<int> pick16(0, 15), pick6(0, 5), digit(0, 9), day(0, 364), dob(0, 364);
  RawIdentity id;
  // Multiplication by an odd constant not divisible by 5 permutes 0..10^8-1, so MRNs are unique per cohort.
  const std::uint64_t mrn = (static_cast<std::uint64_t>(patient_id) * 2654435761ULL + seed * 7919ULL) % 100000000ULL;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "MRN%08llu", static_cast<unsigned long long>(mrn));
  id.mrn = buf;
  id.name = std::string(kFirstNames[pick16(rng)]) + " " + kLastNames[pick16(rng)];
  std::snprintf(buf, sizeof(buf), "555-%03d-%04d", 100 + digit(rng) * 10 + digit(rng), 1000 + pick16(rng) * 500 + digit(rng));
  id.phone = buf;
  id.zip = std::string(kZip3[pick6(rng)]) + static_cast<char>('0' + digit(rng)) + static_cast<char>('0' + digit(rng));
  id.gender = gender_feature >= 0.5 ? "M" : "F";
  id.age_years = age_years_from_feature(age_feature);
  const long first_visit = days_from_iso("2025-01-01") + day(rng);
  const long birth = first_visit - static_cast<long>(id.age_years) * 365 - dob(rng);
  id.birth_date = iso_from_days(birth);
  for (std::size_t t = 0; t < n_visits; ++t) id.visit_dates.push_back(iso_from_days(first_visit + static_cast<long>(t)));
  return id;
}

}  // namespace

int age_years_from_feature(double age) { return static_cast<int>(std::lround(18.0 + 72.0 * std::clamp(age, 0.0, 1.0))); }

std::vector<Transition> rollout_behavior(const State& s0, int patient_id, int horizon, Rng& rng) {
  if (horizon < 1 || horizon > kHorizon) throw std::invalid_argument("rollout_behavior: horizon must be in [1, 50]");
  std::vector<Transition> out;
  State s = s0;
  for (int t = 0; t < horizon; ++t) {
    Transition tr;
    tr.patient_id = patient_id;
    tr.t = t;
    tr.state = s;
    tr.action = behavior_action(s, rng);
    const StepResult r = env_step(s, tr.action, t, rng);
    tr.next_state = r.next_state;
    tr.reward = r.reward;
    tr.parts = r.parts;
    tr.done = r.done || t + 1 == horizon;
    out.push_back(tr);
    if (tr.done) break;
    s = r.next_state;
  }
  return out;
}

std::vector<Transition> Cohort::transitions() const {
  std::vector<Transition> out;
  for (const auto& p : patients) out.insert(out.end(), p.transitions.begin(), p.transitions.end());
  return out;
}

Cohort generate_cohort(const CohortConfig& config) {
  if (config.n_patients < 1) throw std::invalid_argument("generate_cohort: n_patients must be >= 1");
  if (config.horizon < 1 || config.horizon > kHorizon) throw std::invalid_argument("generate_cohort: horizon must be in [1, 50]");
  Cohort c;
  c.patients.reserve(static_cast<std::size_t>(config.n_patients));
  for (int i = 0; i < config.n_patients; ++i) {
    const int pid = config.first_patient_id + i;
    Rng rng = derive_rng(config.seed, kStreamPatient, static_cast<std::uint64_t>(pid));
    State s0 = sample_initial_state(rng);
    s0[kAge] = std::clamp(s0[kAge] + config.age_offset, 0.0, 1.0);
    PatientRecord p;
    p.patient_id = pid;
    p.transitions = rollout_behavior(s0, pid, config.horizon, rng);
    if (config.synthesize_identifiers) {
      p.identity = make_identity(pid, config.seed, s0[kAge], s0[kGender], p.transitions.size());
    }
    c.patients.push_back(std::move(p));
  }
  return c;
}

nlohmann::json state_to_json(const State& s) { return nlohmann::json(std::vector<double>(s.begin(), s.end())); }

State state_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != kStateDim) throw std::invalid_argument("state must be an array of 10 numbers");
  State s{};
  for (std::size_t k = 0; k < kStateDim; ++k) s[k] = j[k].get<double>();
  if (!valid_state(s)) throw std::invalid_argument("state component outside [0,1]");
  return s;
}

nlohmann::json transition_to_json(const Transition& t) {
  return nlohmann::json{{"patient_id", t.patient_id},
                        {"t", t.t},
                        {"state", state_to_json(t.state)},
                        {"action", t.action},
                        {"reward", t.reward},
                        {"reward_penalty", t.parts.penalty},
                        {"reward_bonus", t.parts.bonus},
                        {"reward_cost", t.parts.cost},
                        {"next_state", state_to_json(t.next_state)},
                        {"done", t.done}};
}

Transition transition_from_json(const nlohmann::json& j) {
  Transition t;
  t.patient_id = j.at("patient_id").get<int>();
  t.t = j.at("t").get<int>();
  t.state = state_from_json(j.at("state"));
  t.action = j.at("action").get<int>();
  if (!valid_action(t.action)) throw std::invalid_argument("transition: invalid action");
  t.reward = j.at("reward").get<double>();
  t.parts.penalty = j.at("reward_penalty").get<double>();
  t.parts.bonus = j.at("reward_bonus").get<double>();
  t.parts.cost = j.at("reward_cost").get<double>();
  t.next_state = state_from_json(j.at("next_state"));
  t.done = j.at("done").get<bool>();
  if (t.t < 0 || t.t >= kHorizon) throw std::invalid_argument("transition: t out of range");
  return t;
}

void write_transitions(const std::filesystem::path& path, const std::vector<Transition>& rows) {
  std::vector<nlohmann::json> js;
  js.reserve(rows.size());
  for (const auto& r : rows) js.push_back(transition_to_json(r));
  write_jsonl(path, js);
}

std::vector<Transition> read_transitions(const std::filesystem::path& path) {
  std::vector<Transition> out;
  for (const auto& j : read_jsonl(path)) out.push_back(transition_from_json(j));
  return out;
}

nlohmann::json raw_record_to_json(const PatientRecord& p) {
  if (!p.identity) throw std::invalid_argument("raw_record_to_json: patient has no synthesized identity");
  const RawIdentity& id = *p.identity;
  nlohmann::json tr = nlohmann::json::array();
  for (const auto& t : p.transitions) {
    nlohmann::json j = transition_to_json(t);
    j.erase("patient_id");
    tr.push_back(std::move(j));
  }
  return nlohmann::json{{"mrn", id.mrn},
                        {"name", id.name},
                        {"phone", id.phone},
                        {"zip", id.zip},
                        {"birth_date", id.birth_date},
                        {"gender", id.gender},
                        {"age_years", id.age_years},
                        {"visit_dates", id.visit_dates},
                        {"transitions", tr}};
}

Split split_by_patient(std::vector<int> ids, std::uint64_t seed, double train_fraction) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.empty()) throw std::invalid_argument("split_by_patient: no patients");
  Rng rng = derive_rng(seed, 0x51);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(ids.size())));
  Split s;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  return s;
}

std::vector<int> patient_ids(const std::vector<Transition>& rows) {
  std::set<int> ids;
  for (const auto& r : rows) ids.insert(r.patient_id);
  return {ids.begin(), ids.end()};
}

std::vector<Transition> select_patients(const std::vector<Transition>& rows, const std::vector<int>& ids) {
  const std::set<int> keep(ids.begin(), ids.end());
  std::vector<Transition> out;
  for (const auto& r : rows) {
    if (keep.count(r.patient_id)) out.push_back(r);
  }
  return out;
}

std::vector<std::vector<Transition>> episodes(const std::vector<Transition>& rows) {
  std::map<int, std::vector<Transition>> by;
  for (const auto& r : rows) by[r.patient_id].push_back(r);
  std::vector<std::vector<Transition>> out;
  out.reserve(by.size());
  for (auto& [id, v] : by) {
    std::sort(v.begin(), v.end(), [](const Transition& a, const Transition& b) { return a.t < b.t; });
    out.push_back(std::move(v));
  }
  return out;
}

nlohmann::json DatasetManifest::to_json() const {
  return nlohmann::json{{"seed", seed},
                        {"generator_version", generator_version},
                        {"effect_table_sha256", effect_table_sha256},
                        {"n_patients", n_patients},
                        {"n_transitions", n_transitions},
                        {"split", {{"train", split.train}, {"validation", split.validation}}},
                        {"transitions_sha256", transitions_sha256}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.generator_version = j.at("generator_version").get<std::string>();
  m.effect_table_sha256 = j.at("effect_table_sha256").get<std::string>();
  m.n_patients = j.at("n_patients").get<int>();
  m.n_transitions = j.at("n_transitions").get<std::size_t>();
  m.split.train = j.at("split").at("train").get<std::vector<int>>();
  m.split.validation = j.at("split").at("validation").get<std::vector<int>>();
  m.transitions_sha256 = j.value("transitions_sha256", "");
  return m;
}

}  // namespace twinbench::cohort
