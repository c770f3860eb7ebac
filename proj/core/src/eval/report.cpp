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

#include "twinbench/eval/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "twinbench/eval/metrics.hpp"
#include "twinbench/online/safety.hpp"
#include "twinbench/policy/qnet.hpp"

namespace twinbench::eval {

std::vector<FeatureImportance> feature_importance(const QFn& q, const std::vector<State>& states,
                                                  std::uint64_t seed) {
  if (states.size() < 100) throw std::invalid_argument("feature_importance: need at least 100 states");
  const std::vector<ActionValues> base = q(states);
  std::vector<int> chosen(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) chosen[i] = policy::argmax(base[i]);

  std::vector<FeatureImportance> out(kStateDim);
  double total = 0.0;
  for (std::size_t f = 0; f < kStateDim; ++f) {
    std::vector<std::size_t> perm(states.size());
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng = derive_rng(seed, 0x46494d50u, f);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<State> shuffled = states;
    for (std::size_t i = 0; i < states.size(); ++i) shuffled[i][f] = states[perm[i]][f];
    const std::vector<ActionValues> moved = q(shuffled);
    double d = 0.0;
    for (std::size_t i = 0; i < states.size(); ++i) {
      const auto a = static_cast<std::size_t>(chosen[i]);
      d += std::abs(moved[i][a] - base[i][a]);
    }
    out[f].feature = f;
    out[f].name = std::string(feature_name(f));
    out[f].mean_abs_delta = d / static_cast<double>(states.size());
    total += out[f].mean_abs_delta;
  }
  for (auto& fi : out) fi.percent = total > 0.0 ? 100.0 * fi.mean_abs_delta / total : 0.0;
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.percent > b.percent; });
  return out;
}

// ---------------------------------------------------------------- records

nlohmann::json EvalRecord::summary() const {
  nlohmann::json j = {{"label", label}, {"seed", seed}, {"split_fingerprint", split_fingerprint}};
  if (!returns.empty()) {
    j["episodes"] = returns.size();
    j["mean_return"] = mean(returns);
    if (returns.size() >= 2) {
      const double sd = sample_std(returns);
      j["std_return"] = sd;
      if (sd > 0.0) j["sharpe"] = mean(returns) / sd;
    }
  }
  if (!safe.empty()) {
    const auto pass = static_cast<double>(std::count(safe.begin(), safe.end(), 1));
    j["safety_rate"] = pass / static_cast<double>(safe.size());
  }
  const double n = std::accumulate(action_histogram.begin(), action_histogram.end(), 0.0);
  if (n > 0.0) {
    double h = 0.0;
    for (double c : action_histogram) {
      if (c > 0.0) h -= (c / n) * std::log(c / n);
    }
    j["action_entropy"] = h;
  }
  if (!queried.empty()) {
    const auto q = static_cast<double>(std::count(queried.begin(), queried.end(), 1));
    j["query_rate"] = q / static_cast<double>(queried.size());
  }
  if (!latency_s.empty()) j["mean_response_s"] = mean(latency_s);
  if (wall_s > 0.0 && !latency_s.empty()) j["throughput_hz"] = static_cast<double>(latency_s.size()) / wall_s;
  return j;
}

nlohmann::json EvalRecord::to_json() const {
  return {{"label", label},
          {"seed", seed},
          {"split_fingerprint", split_fingerprint},
          {"gamma", gamma},
          {"returns", returns},
          {"safe", safe},
          {"action_histogram", action_histogram},
          {"queried", queried},
          {"latency_s", latency_s},
          {"wall_s", wall_s},
          {"summary", summary()}};
}

EvalRecord EvalRecord::from_json(const nlohmann::json& j) {
  EvalRecord r;
  r.label = j.value("label", std::string());
  r.seed = j.value("seed", std::uint64_t{0});
  r.split_fingerprint = j.value("split_fingerprint", std::string());
  r.gamma = j.value("gamma", 0.99);
  r.returns = j.value("returns", std::vector<double>{});
  r.safe = j.value("safe", std::vector<std::uint8_t>{});
  if (j.contains("action_histogram")) r.action_histogram = j["action_histogram"].get<ActionValues>();
  r.queried = j.value("queried", std::vector<std::uint8_t>{});
  r.latency_s = j.value("latency_s", std::vector<double>{});
  r.wall_s = j.value("wall_s", 0.0);
  return r;
}

std::string EvalRecord::episodes_csv() const {
  std::string out = "episode,return\n";
  char buf[64];
  for (std::size_t i = 0; i < returns.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, returns[i]);
    out += buf;
  }
  return out;
}

EvalRecord make_eval_record(const std::vector<twin::Trajectory>& trajectories, double gamma, std::uint64_t seed,
                            const std::string& split_fingerprint, const std::string& label) {
  EvalRecord r;
  r.label = label;
  r.seed = seed;
  r.split_fingerprint = split_fingerprint;
  r.gamma = gamma;
  for (const auto& tr : trajectories) {
    r.returns.push_back(discounted_return(tr.rewards, gamma));
    for (std::size_t t = 0; t < tr.actions.size(); ++t) {
      r.safe.push_back(online::safety_gate(tr.states[t], tr.actions[t]).pass ? 1 : 0);
      r.action_histogram[static_cast<std::size_t>(tr.actions[t])] += 1.0;
    }
  }
  return r;
}

EvalRecord make_stream_record(const std::vector<online::StepRecord>& records, double wall_s, std::uint64_t seed,
                              const std::string& label) {
  EvalRecord r;
  r.label = label;
  r.seed = seed;
  r.wall_s = wall_s;
  for (const auto& rec : records) {
    r.safe.push_back(rec.safe ? 1 : 0);
    r.action_histogram[static_cast<std::size_t>(rec.emitted)] += 1.0;
    r.queried.push_back(rec.queries_issued > 0 ? 1 : 0);
    r.latency_s.push_back(rec.latency_s);
  }
  return r;
}

online::OnlineMetrics online_metrics_from_log(const std::vector<nlohmann::json>& log, std::size_t initial_buffer,
                                              double wall_s) {
  std::vector<online::StepRecord> recs;
  recs.reserve(log.size());
  for (std::size_t i = 0; i < log.size(); ++i) {
    const nlohmann::json& j = log[i];
    for (const char* key : {"step", "safe", "queries_issued", "labels_added", "labeled_size", "blocks_run",
                            "latency_s", "verdict"}) {
      if (!j.contains(key)) throw std::invalid_argument(std::string("online_metrics: truncated log entry, missing ") + key);
    }
    if (j["step"].get<std::int64_t>() != static_cast<std::int64_t>(i))
      throw std::invalid_argument("online_metrics: log is truncated or out of order at entry " + std::to_string(i));
    online::StepRecord r;
    r.step = static_cast<std::int64_t>(i);
    r.safe = j["safe"].get<bool>();
    r.queries_issued = j["queries_issued"].get<std::size_t>();
    r.labels_added = j["labels_added"].get<std::size_t>();
    r.labeled_size = j["labeled_size"].get<std::size_t>();
    r.blocks_run = j["blocks_run"].get<std::size_t>();
    r.latency_s = j["latency_s"].get<double>();
    r.verdict.force_query = j["verdict"].value("force_query", false);
    recs.push_back(r);
  }
  return online::online_metrics(recs, initial_buffer, wall_s);
}

// ---------------------------------------------------------------- report

ReportInputs build_report_inputs(const std::string& patient_id, const State& s, int recommendation, double u,
                                 const twin::TwinEnsemble& twin, const outcome::OutcomeModel& outcome,
                                 const twin::PolicyFn& plan, int horizon, double gamma) {
  if (!valid_action(recommendation)) throw std::invalid_argument("build_report_inputs: invalid recommendation");
  ReportInputs in;
  in.patient_id = patient_id;
  in.state = s;
  in.recommendation = recommendation;
  in.u = u;
  for (int a = 0; a < static_cast<int>(kNumActions); ++a) {
    const twin::PolicyFn fixed = [a](const std::vector<State>& st) { return std::vector<int>(st.size(), a); };
    const twin::Trajectory tr = twin::rollout(twin, outcome, fixed, {s}, horizon).front();
    Projection p;
    p.action = a;
    p.projected_return = discounted_return(tr.rewards, gamma);
    p.immediate_outcome = outcome.predict(s, a);
    p.treatment_effect = outcome.treatment_effect(s, a);
    p.trajectory = tr.states;
    in.projections.push_back(std::move(p));
  }
  const twin::PolicyFn gated = [&plan](const std::vector<State>& st) {
    std::vector<int> a = plan(st);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const online::SafetyVerdict v = online::safety_gate(st[i], a[i]);
      if (!v.pass) a[i] = v.fallback;
    }
    return a;
  };
  in.plan_trajectory = twin::rollout(twin, outcome, gated, {s}, horizon).front().states;
  return in;
}

namespace {

std::string fmt(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string pretty(std::string_view name) {
  std::string out(name);
  std::replace(out.begin(), out.end(), '_', ' ');
  return out;
}

const online::RangeRule* range_for(std::size_t feature) {
  for (const auto& r : online::SafetyRules::standard().ranges) {
    if (r.feature == feature) return &r;
  }
  return nullptr;
}

std::string sparkline(const std::vector<State>& traj, std::size_t feature) {
  const double w = 240.0, h = 80.0;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"240\" height=\"96\" viewBox=\"0 0 240 96\" role=\"img\">";
  svg << "<text x=\"2\" y=\"10\" font-size=\"10\" font-family=\"sans-serif\">" << pretty(feature_name(feature))
      << "</text>";
  svg << "<rect x=\"0\" y=\"14\" width=\"240\" height=\"80\" fill=\"#fafafa\" stroke=\"#ccc\"/>";
  if (const online::RangeRule* r = range_for(feature)) {
    const double top = 14.0 + h * (1.0 - r->hi);
    const double height = h * (r->hi - r->lo);
    svg << "<rect x=\"0\" y=\"" << fmt(top, 2) << "\" width=\"240\" height=\"" << fmt(height, 2)
        << "\" fill=\"#e3f2e3\"/>";
  }
  svg << "<polyline fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"1.5\" points=\"";
  const double dx = traj.size() > 1 ? w / static_cast<double>(traj.size() - 1) : 0.0;
  for (std::size_t t = 0; t < traj.size(); ++t) {
    if (t) svg << ' ';
    svg << fmt(dx * static_cast<double>(t), 2) << ',' << fmt(14.0 + h * (1.0 - traj[t][feature]), 2);
  }
  svg << "\"/></svg>";
  return svg.str();
}

}  // namespace

std::string render_report(const ReportInputs& in) {
  if (in.projections.size() != kNumActions) throw std::invalid_argument("render_report: missing projections");
  for (std::size_t a = 0; a < kNumActions; ++a) {
    if (in.projections[a].action != static_cast<int>(a))
      throw std::invalid_argument("render_report: projections must be ordered by action");
  }
  if (in.plan_trajectory.empty()) throw std::invalid_argument("render_report: missing plan trajectory");
  const Projection& rec = in.projections[static_cast<std::size_t>(in.recommendation)];

  std::ostringstream h;
  h << "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n"
    << "<title>Patient report " << escape(in.patient_id) << "</title>\n"
    << "<style>body{font-family:sans-serif;margin:24px;color:#222}table{border-collapse:collapse;margin:8px 0}"
    << "td,th{border:1px solid #ccc;padding:4px 8px;text-align:left}.abnormal{background:#fde2e2}"
    << ".recommended{background:#e3eefc;font-weight:bold}.primary{border:2px solid #1f5fa8;padding:12px;"
    << "margin:12px 0}</style>\n</head>\n<body>\n";
  h << "<h1>Patient report " << escape(in.patient_id) << "</h1>\n";

  // Profile.
  h << "<section id=\"profile\">\n<h2>Profile</h2>\n<table>\n<tr><th>Feature</th><th>Value</th><th>Range</th>"
    << "<th>Flag</th></tr>\n";
  std::vector<std::string> out_of_range;
  for (std::size_t f = 0; f < kStateDim; ++f) {
    const online::RangeRule* r = range_for(f);
    std::string flag = "-";
    std::string range = "-";
    bool abnormal = false;
    if (r) {
      const std::string vf = online::vital_flag(in.state, *r);
      abnormal = vf != "normal";
      flag = abnormal ? "abnormal (" + vf + ")" : "normal";
      range = fmt(r->lo, 2) + " - " + fmt(r->hi, 2);
      if (abnormal) out_of_range.push_back(pretty(feature_name(f)) + " " + vf);
    }
    h << "<tr" << (abnormal ? " class=\"abnormal\"" : "") << "><td>" << pretty(feature_name(f)) << "</td><td>"
      << fmt(in.state[f]) << "</td><td>" << range << "</td><td>" << flag << "</td></tr>\n";
  }
  h << "</table>\n</section>\n";

  // Recommendation.
  h << "<section id=\"recommendation\" class=\"primary\">\n<h2>Recommendation</h2>\n<p><strong>"
    << action_name(in.recommendation) << "</strong></p>\n<p>Confidence: " << fmt(1.0 - in.u)
    << "</p>\n<p>Expected immediate outcome: " << fmt(rec.immediate_outcome) << "</p>\n</section>\n";

  // Comparison.
  h << "<section id=\"comparison\">\n<h2>Treatment comparison</h2>\n<table>\n<tr><th>Treatment</th>"
    << "<th>Projected return</th><th>Immediate outcome</th><th>Effect vs Placebo</th></tr>\n";
  for (const auto& p : in.projections) {
    h << "<tr" << (p.action == in.recommendation ? " class=\"recommended\"" : "") << "><td>" << action_name(p.action)
      << "</td><td>" << fmt(p.projected_return) << "</td><td>" << fmt(p.immediate_outcome) << "</td><td>"
      << fmt(p.treatment_effect) << "</td></tr>\n";
  }
  h << "</table>\n</section>\n";

  // Rationale.
  h << "<section id=\"rationale\">\n<h2>Rationale</h2>\n<p>";
  if (out_of_range.empty()) {
    h << "All gated vitals are within range.";
  } else {
    h << "Out-of-range vitals: ";
    for (std::size_t i = 0; i < out_of_range.size(); ++i) h << (i ? ", " : "") << out_of_range[i];
    h << '.';
  }
  h << "</p>\n<p>";
  const Projection* best_alt = nullptr;
  for (const auto& p : in.projections) {
    if (p.action == in.recommendation) continue;
    if (!best_alt || p.treatment_effect > best_alt->treatment_effect) best_alt = &p;
  }
  h << "Effect of " << action_name(in.recommendation) << " vs Placebo: " << fmt(rec.treatment_effect)
    << ". Best alternative " << action_name(best_alt->action) << ": " << fmt(best_alt->treatment_effect)
    << " (gap " << fmt(rec.treatment_effect - best_alt->treatment_effect) << ").";
  h << "</p>\n</section>\n";

  // Trajectories.
  h << "<section id=\"trajectories\">\n<h2>Projected biomarkers under the recommended plan</h2>\n<div>";
  for (std::size_t f : {std::size_t{kGlucose}, std::size_t{kBloodPressure}, std::size_t{kHeartRate},
                        std::size_t{kSpo2}}) {
    h << sparkline(in.plan_trajectory, f);
  }
  h << "</div>\n</section>\n</body>\n</html>\n";
  return h.str();
}

}  // namespace twinbench::eval
