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

#include <cstddef>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "twinbench/cohort/types.hpp"

namespace twinbench::deid {

// Raised for records that must not pass ingress (unknown field, missing key,
// already de-identified input).
class RejectedRecord : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DeidPolicy {
  std::vector<std::string> direct_identifier_fields{"name", "mrn", "phone", "birth_date"};
  std::string pseudonym_salt;
  int zip_digits = 3;
  // Lower edges of the age buckets; the last bucket is open-ended ("90+").
  std::vector<int> age_breaks{0, 10, 20, 30, 40, 50, 60, 70, 80, 90};
  int age_max = 130;
  int date_shift_bound_days = 365;
  int k = 5;
  std::vector<std::string> quasi_identifiers{"zip3", "age_bucket", "gender"};

  // Field roles of the raw ingress schema besides direct identifiers.
  std::string key_field = "mrn";
  std::string zip_field = "zip";
  std::string age_field = "age_years";
  std::vector<std::string> date_fields{"visit_dates"};
  std::vector<std::string> passthrough_fields{"gender", "transitions"};

  void validate() const;
  // Canonical text form; its SHA-256 is the policy hash.
  std::string canonical() const;
  std::string hash() const;

  // Declarative "key: value" document; list values are comma separated; '#' starts a comment.
  static DeidPolicy parse(const std::string& text);
  static DeidPolicy load(const std::filesystem::path& path);
};

std::string pseudonym(const std::string& salt, const std::string& mrn);  // 16 hex chars
int date_offset_days(const std::string& salt, const std::string& mrn, int bound);
std::string age_bucket(int age_years, const DeidPolicy& policy);
std::string generalize_zip(const std::string& zip, int digits);

// Raw record -> de-identified record. Fails closed with RejectedRecord.
nlohmann::json deidentify_record(const nlohmann::json& raw, const DeidPolicy& policy);

struct EquivalenceClass {
  std::vector<std::string> key;
  std::size_t size = 0;
};

struct AnonymityReport {
  bool pass = false;
  int k = 0;
  std::vector<std::string> quasi_ids;
  std::vector<EquivalenceClass> classes;     // every class, sorted by key
  std::vector<EquivalenceClass> violations;  // classes with size < k
  std::size_t record_count = 0;

  std::map<std::size_t, std::size_t> size_histogram() const;
};

AnonymityReport kanonymity_check(const std::vector<nlohmann::json>& records, const std::vector<std::string>& quasi_ids,
                                 int k);

struct SuppressionResult {
  std::vector<nlohmann::json> records;
  std::size_t suppressed = 0;
  std::vector<std::string> warnings;
};

SuppressionResult suppress_violations(const std::vector<nlohmann::json>& records, const AnonymityReport& report);

// Append-only audit trail (JSON Lines).
class AuditLog {
 public:
  explicit AuditLog(std::filesystem::path path) : path_(std::move(path)) {}
  void append(nlohmann::json entry) const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

struct PipelineResult {
  std::vector<nlohmann::json> records;
  std::size_t input_count = 0;
  std::size_t rejected = 0;
  std::size_t suppressed = 0;
  AnonymityReport final_report;
};

// deidentify -> check -> suppress -> re-check. Rejected inputs are counted and audited, never emitted.
PipelineResult run_pipeline(const std::vector<nlohmann::json>& raw, const DeidPolicy& policy, const AuditLog* audit);

// Clinical payload of de-identified records; patient ids are assigned by record order.
std::vector<Transition> extract_transitions(const std::vector<nlohmann::json>& records);

}  // namespace twinbench::deid
