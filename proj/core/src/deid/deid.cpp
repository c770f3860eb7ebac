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

#include "twinbench/deid/deid.hpp"

#include <openssl/evp.h>
#include <openssl/hmac.h>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <set>
#include <sstream>

#include "twinbench/cohort/dataset.hpp"
#include "twinbench/common/dates.hpp"
#include "twinbench/common/io.hpp"

namespace twinbench::deid {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

std::vector<unsigned char> hmac_sha256(const std::string& key, const std::string& msg) {
  std::vector<unsigned char> md(EVP_MAX_MD_SIZE);
  unsigned int len = 0;
  if (!HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), reinterpret_cast<const unsigned char*>(msg.data()),
            msg.size(), md.data(), &len)) {
    throw std::runtime_error("HMAC-SHA256 failed");
  }
  md.resize(len);
  return md;
}

std::string now_iso() {
  const auto now = std::chrono::system_clock::now();
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();
  const long days = static_cast<long>(secs / 86400);
  const long rem = static_cast<long>(secs % 86400);
  char buf[16];
  std::snprintf(buf, sizeof(buf), "T%02ld:%02ld:%02ldZ", rem / 3600, (rem / 60) % 60, rem % 60);
  return iso_from_days(days) + buf;
}

std::string class_key_string(const std::vector<std::string>& key) { return join(key); }

std::vector<std::string> record_key(const nlohmann::json& r, const std::vector<std::string>& quasi_ids) {
  std::vector<std::string> key;
  key.reserve(quasi_ids.size());
  for (const auto& q : quasi_ids) {
    if (!r.contains(q)) throw std::invalid_argument("kanonymity_check: record lacks quasi-identifier '" + q + "'");
    const auto& v = r.at(q);
    key.push_back(v.is_string() ? v.get<std::string>() : v.dump());
  }
  return key;
}

}  // namespace

void DeidPolicy::validate() const {
  if (k < 2) throw std::invalid_argument("deid policy: k must be >= 2");
  if (date_shift_bound_days < 1) throw std::invalid_argument("deid policy: date_shift_bound_days must be >= 1");
  if (pseudonym_salt.empty()) throw std::invalid_argument("deid policy: pseudonym_salt must be set");
  if (zip_digits < 0 || zip_digits > 5) throw std::invalid_argument("deid policy: zip_digits must be in [0, 5]");
  if (age_breaks.empty() || age_breaks.front() != 0) throw std::invalid_argument("deid policy: age buckets must start at 0");
  for (std::size_t i = 1; i < age_breaks.size(); ++i) {
    if (age_breaks[i] <= age_breaks[i - 1]) throw std::invalid_argument("deid policy: age breaks must increase");
  }
  if (age_max != 130 || age_breaks.back() >= age_max) {
    throw std::invalid_argument("deid policy: age buckets must partition [0, 130]");
  }
  if (std::find(direct_identifier_fields.begin(), direct_identifier_fields.end(), key_field) ==
      direct_identifier_fields.end()) {
    throw std::invalid_argument("deid policy: key field must be listed as a direct identifier");
  }
}

std::string DeidPolicy::canonical() const {
  std::ostringstream ss;
  ss << "direct_identifier_fields: " << join(direct_identifier_fields) << "\n";
  ss << "zip_generalization: " << zip_digits << "\n";
  std::vector<std::string> breaks;
  for (int b : age_breaks) breaks.push_back(std::to_string(b));
  ss << "age_buckets: " << join(breaks) << "\n";
  ss << "date_shift_bound_days: " << date_shift_bound_days << "\n";
  ss << "k: " << k << "\n";
  ss << "quasi_identifiers: " << join(quasi_identifiers) << "\n";
  ss << "key_field: " << key_field << "\n";
  ss << "zip_field: " << zip_field << "\n";
  ss << "age_field: " << age_field << "\n";
  ss << "date_fields: " << join(date_fields) << "\n";
  ss << "passthrough_fields: " << join(passthrough_fields) << "\n";
  return ss.str();
}

std::string DeidPolicy::hash() const { return sha256_hex(canonical()); }

DeidPolicy DeidPolicy::parse(const std::string& text) {
  DeidPolicy p;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("deid policy line " + std::to_string(lineno) + ": expected 'key: value'");
    const std::string key = trim(line.substr(0, colon));
    const std::string value = trim(line.substr(colon + 1));
    auto as_int = [&] {
      try {
        std::size_t used = 0;
        const int v = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
      } catch (const std::exception&) {
        throw std::invalid_argument("deid policy line " + std::to_string(lineno) + ": '" + key + "' needs an integer");
      }
    };
    if (key == "direct_identifier_fields") p.direct_identifier_fields = split_list(value);
    else if (key == "pseudonym_salt") p.pseudonym_salt = value;
    else if (key == "zip_generalization") p.zip_digits = as_int();
    else if (key == "age_buckets") {
      p.age_breaks.clear();
      for (const auto& b : split_list(value)) p.age_breaks.push_back(std::stoi(b));
    } else if (key == "age_max") p.age_max = as_int();
    else if (key == "date_shift_bound_days") p.date_shift_bound_days = as_int();
    else if (key == "k") p.k = as_int();
    else if (key == "quasi_identifiers") p.quasi_identifiers = split_list(value);
    else if (key == "key_field") p.key_field = value;
    else if (key == "zip_field") p.zip_field = value;
    else if (key == "age_field") p.age_field = value;
    else if (key == "date_fields") p.date_fields = split_list(value);
    else if (key == "passthrough_fields") p.passthrough_fields = split_list(value);
    else throw std::invalid_argument("deid policy line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  p.validate();
  return p;
}

DeidPolicy DeidPolicy::load(const std::filesystem::path& path) { return parse(read_text(path)); }

std::string pseudonym(const std::string& salt, const std::string& mrn) {
  const auto md = hmac_sha256(salt, "pseudonym:" + mrn);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < 8; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

int date_offset_days(const std::string& salt, const std::string& mrn, int bound) {
  if (bound < 1) throw std::invalid_argument("date_offset_days: bound must be >= 1");
  const auto md = hmac_sha256(salt, "date-shift:" + mrn);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) v = (v << 8) | md[i];
  const auto span = static_cast<std::uint64_t>(2 * bound + 1);
  return static_cast<int>(v % span) - bound;
}

std::string age_bucket(int age_years, const DeidPolicy& policy) {
  if (age_years < 0 || age_years > policy.age_max) throw std::invalid_argument("age out of range");
  for (std::size_t i = policy.age_breaks.size(); i-- > 0;) {
    if (age_years >= policy.age_breaks[i]) {
      if (i + 1 == policy.age_breaks.size()) return std::to_string(policy.age_breaks[i]) + "+";
      return std::to_string(policy.age_breaks[i]) + "-" + std::to_string(policy.age_breaks[i + 1] - 1);
    }
  }
  throw std::invalid_argument("age below first bucket");
}

std::string generalize_zip(const std::string& zip, int digits) {
  if (zip.size() < static_cast<std::size_t>(digits) ||
      !std::all_of(zip.begin(), zip.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw std::invalid_argument("malformed ZIP");
  }
  return zip.substr(0, static_cast<std::size_t>(digits));
}

nlohmann::json deidentify_record(const nlohmann::json& raw, const DeidPolicy& policy) {
  if (!raw.is_object()) throw RejectedRecord("record is not an object");
  if (raw.contains("pseudonym")) throw RejectedRecord("record is already de-identified");
  std::set<std::string> known(policy.direct_identifier_fields.begin(), policy.direct_identifier_fields.end());
  known.insert(policy.zip_field);
  known.insert(policy.age_field);
  known.insert(policy.date_fields.begin(), policy.date_fields.end());
  known.insert(policy.passthrough_fields.begin(), policy.passthrough_fields.end());
  for (const auto& [field, value] : raw.items()) {
    if (!known.count(field)) throw RejectedRecord("unknown field '" + field + "'");
  }
  if (!raw.contains(policy.key_field) || !raw.at(policy.key_field).is_string() ||
      raw.at(policy.key_field).get<std::string>().empty()) {
    throw RejectedRecord("missing " + policy.key_field);
  }
  const std::string mrn = raw.at(policy.key_field).get<std::string>();

  nlohmann::json out = nlohmann::json::object();
  out["pseudonym"] = pseudonym(policy.pseudonym_salt, mrn);
  try {
    if (raw.contains(policy.zip_field)) {
      out["zip" + std::to_string(policy.zip_digits)] =
          generalize_zip(raw.at(policy.zip_field).get<std::string>(), policy.zip_digits);
    }
    if (raw.contains(policy.age_field)) out["age_bucket"] = age_bucket(raw.at(policy.age_field).get<int>(), policy);
    const int offset = date_offset_days(policy.pseudonym_salt, mrn, policy.date_shift_bound_days);
    for (const auto& f : policy.date_fields) {
      if (!raw.contains(f)) continue;
      const auto& v = raw.at(f);
      if (v.is_string()) {
        out[f] = iso_from_days(days_from_iso(v.get<std::string>()) + offset);
      } else if (v.is_array()) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& d : v) arr.push_back(iso_from_days(days_from_iso(d.get<std::string>()) + offset));
        out[f] = std::move(arr);
      } else {
        throw RejectedRecord("date field '" + f + "' must be a string or list of strings");
      }
    }
  } catch (const RejectedRecord&) {
    throw;
  } catch (const std::exception& e) {
    throw RejectedRecord(std::string("malformed quasi-identifier: ") + e.what());
  }
  for (const auto& f : policy.passthrough_fields) {
    if (raw.contains(f)) out[f] = raw.at(f);
  }
  return out;
}

std::map<std::size_t, std::size_t> AnonymityReport::size_histogram() const {
  std::map<std::size_t, std::size_t> h;
  for (const auto& c : classes) ++h[c.size];
  return h;
}

AnonymityReport kanonymity_check(const std::vector<nlohmann::json>& records, const std::vector<std::string>& quasi_ids,
                                 int k) {
  if (k < 2) throw std::invalid_argument("kanonymity_check: k must be >= 2");
  if (records.empty()) throw std::invalid_argument("kanonymity_check: empty record set");
  std::map<std::vector<std::string>, std::size_t> counts;
  for (const auto& r : records) ++counts[record_key(r, quasi_ids)];
  AnonymityReport rep;
  rep.k = k;
  rep.quasi_ids = quasi_ids;
  rep.record_count = records.size();
  for (const auto& [key, n] : counts) {
    rep.classes.push_back({key, n});
    if (n < static_cast<std::size_t>(k)) rep.violations.push_back({key, n});
  }
  rep.pass = rep.violations.empty();
  return rep;
}

SuppressionResult suppress_violations(const std::vector<nlohmann::json>& records, const AnonymityReport& report) {
  SuppressionResult res;
  std::set<std::vector<std::string>> bad;
  for (const auto& v : report.violations) bad.insert(v.key);
  for (const auto& r : records) {
    if (!bad.empty() && bad.count(record_key(r, report.quasi_ids))) {
      ++res.suppressed;
    } else {
      res.records.push_back(r);
    }
  }
  if (res.records.empty() && !records.empty()) res.warnings.push_back("all records suppressed");
  return res;
}

void AuditLog::append(nlohmann::json entry) const {
  entry["timestamp"] = now_iso();
  append_jsonl(path_, entry);
}

namespace {

nlohmann::json report_json(const AnonymityReport& rep) {
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [size, n] : rep.size_histogram()) hist[std::to_string(size)] = n;
  nlohmann::json viol = nlohmann::json::array();
  for (const auto& v : rep.violations) viol.push_back({{"key", class_key_string(v.key)}, {"size", v.size}});
  return {{"k", rep.k},
          {"quasi_identifiers", rep.quasi_ids},
          {"records", rep.record_count},
          {"classes", rep.classes.size()},
          {"class_size_histogram", hist},
          {"violating_classes", viol},
          {"pass", rep.pass}};
}

}  // namespace

PipelineResult run_pipeline(const std::vector<nlohmann::json>& raw, const DeidPolicy& policy, const AuditLog* audit) {
  policy.validate();
  PipelineResult res;
  res.input_count = raw.size();
  const std::string phash = policy.hash();
  std::vector<nlohmann::json> clean;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    try {
      clean.push_back(deidentify_record(raw[i], policy));
    } catch (const RejectedRecord& e) {
      ++res.rejected;
      if (audit) audit->append({{"event", "reject"}, {"index", i}, {"reason", e.what()}, {"policy_hash", phash}});
    }
  }
  if (clean.empty()) throw std::runtime_error("deid pipeline: no records survived ingress");
  const AnonymityReport first = kanonymity_check(clean, policy.quasi_identifiers, policy.k);
  if (audit) {
    nlohmann::json e = report_json(first);
    e["event"] = "kanonymity_check";
    e["policy_hash"] = phash;
    audit->append(e);
  }
  SuppressionResult sup = suppress_violations(clean, first);
  res.suppressed = sup.suppressed;
  if (audit) {
    audit->append({{"event", "suppress"}, {"suppressed", sup.suppressed}, {"remaining", sup.records.size()},
                   {"warnings", sup.warnings}, {"policy_hash", phash}});
  }
  if (sup.records.empty()) {
    res.final_report = first;
    res.final_report.pass = false;
    return res;
  }
  res.final_report = kanonymity_check(sup.records, policy.quasi_identifiers, policy.k);
  if (audit) {
    nlohmann::json e = report_json(res.final_report);
    e["event"] = "kanonymity_recheck";
    e["policy_hash"] = phash;
    audit->append(e);
  }
  res.records = std::move(sup.records);
  return res;
}

std::vector<Transition> extract_transitions(const std::vector<nlohmann::json>& records) {
  std::vector<Transition> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!r.contains("pseudonym")) throw std::invalid_argument("extract_transitions: record is not de-identified");
    for (auto tj : r.at("transitions")) {
      tj["patient_id"] = static_cast<int>(i);
      out.push_back(cohort::transition_from_json(tj));
    }
  }
  return out;
}

}  // namespace twinbench::deid
