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
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "twinbench/cohort/types.hpp"
#include "twinbench/online/stream.hpp"
#include "twinbench/outcome/outcome.hpp"
#include "twinbench/twin/dynamics.hpp"
#include "twinbench/twin/rollout.hpp"

namespace twinbench::eval {

using QFn = std::function<std::vector<ActionValues>(const std::vector<State>&)>;

struct FeatureImportance {
  std::size_t feature = 0;
  std::string name;
  double mean_abs_delta = 0.0;
  double percent = 0.0;
};

// Permutation importance of each state feature for the Q value of the chosen action
// (argmax on the unpermuted state). Sorted by percent, descending; ties by feature index.
std::vector<FeatureImportance> feature_importance(const QFn& q, const std::vector<State>& states,
                                                  std::uint64_t seed);

// Raw evaluation series; aggregates are always recomputed from them.
struct EvalRecord {
  std::string label;
  std::uint64_t seed = 0;
  std::string split_fingerprint;
  double gamma = 0.99;
  std::vector<double> returns;         // one per episode
  std::vector<std::uint8_t> safe;      // one per step, gate verdict of the proposal
  ActionValues action_histogram{};     // counts
  std::vector<std::uint8_t> queried;   // stream only
  std::vector<double> latency_s;       // stream only
  double wall_s = 0.0;                 // stream only

  nlohmann::json summary() const;
  nlohmann::json to_json() const;
  static EvalRecord from_json(const nlohmann::json& j);
  // episode,return rows.
  std::string episodes_csv() const;
};

EvalRecord make_eval_record(const std::vector<twin::Trajectory>& trajectories, double gamma, std::uint64_t seed,
                            const std::string& split_fingerprint, const std::string& label);
EvalRecord make_stream_record(const std::vector<online::StepRecord>& records, double wall_s, std::uint64_t seed,
                              const std::string& label);

// Table-2 record from a parsed stream log. Throws on a truncated or out-of-order log.
online::OnlineMetrics online_metrics_from_log(const std::vector<nlohmann::json>& log, std::size_t initial_buffer,
                                              double wall_s);

struct Projection {
  int action = 0;
  double projected_return = 0.0;  // discounted, raw outcome units
  double immediate_outcome = 0.0;
  double treatment_effect = 0.0;
  std::vector<State> trajectory;
};

struct ReportInputs {
  std::string patient_id;
  State state{};
  int recommendation = kPlacebo;
  double u = 0.0;
  std::vector<Projection> projections;  // one per action
  std::vector<State> plan_trajectory;   // under the recommended plan
};

// Projections of every fixed action and the gated policy plan over `horizon` steps.
ReportInputs build_report_inputs(const std::string& patient_id, const State& s, int recommendation, double u,
                                 const twin::TwinEnsemble& twin, const outcome::OutcomeModel& outcome,
                                 const twin::PolicyFn& plan, int horizon = 10, double gamma = 0.99);

// Standalone HTML document; byte-identical for identical inputs.
std::string render_report(const ReportInputs& in);

}  // namespace twinbench::eval
