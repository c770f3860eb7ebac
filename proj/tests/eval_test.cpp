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
#include <numeric>

#include "twinbench/cohort/generator.hpp"
#include "twinbench/eval/metrics.hpp"
#include "twinbench/eval/report.hpp"

using namespace twinbench;
using nlohmann::json;
namespace ev = twinbench::eval;

namespace {

State normal_state() {
  State s;
  s.fill(0.5);
  s[kSpo2] = 0.95;
  return s;
}

ev::ReportInputs report_for(const State& s) {
  ev::ReportInputs in;
  in.patient_id = "p-7";
  in.state = s;
  in.recommendation = kMedA;
  in.u = 0.12;
  for (int a = 0; a < 5; ++a) {
    ev::Projection p;
    p.action = a;
    p.projected_return = 10.0 + a;
    p.immediate_outcome = 0.5 * a;
    p.treatment_effect = a == kPlacebo ? 0.0 : 0.1 * a;
    p.trajectory = {s, s};
    in.projections.push_back(p);
  }
  in.plan_trajectory = {s, s, s};
  return in;
}

std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST(Metrics, DiscountedReturn) {
  const std::vector<double> ones{1, 1, 1};
  EXPECT_NEAR(ev::discounted_return(ones, 0.99), 2.9701, 1e-12);
  EXPECT_EQ(ev::discounted_return(std::vector<double>{}, 0.99), 0.0);
  EXPECT_EQ(ev::discounted_return(std::vector<double>{4.5, 2.0, -3.0}, 0.0), 4.5);
}

TEST(Metrics, SharpeLike) {
  EXPECT_NEAR(37.73 / 11.01, 3.427, 5e-4);
  // Two returns with mean 37.73 and sample std 11.01.
  const double half = 11.01 / std::sqrt(2.0);
  const std::vector<double> table{37.73 - half, 37.73 + half};
  EXPECT_NEAR(ev::sharpe_like(table), 3.427, 5e-4);
  EXPECT_NEAR(ev::sharpe_like(std::vector<double>{0.0, 2.0}), 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_THROW(ev::sharpe_like(std::vector<double>{3.0, 3.0, 3.0}), std::invalid_argument);
  EXPECT_THROW(ev::sharpe_like(std::vector<double>{3.0}), std::invalid_argument);
}

TEST(Metrics, ActionEntropy) {
  EXPECT_EQ(ev::action_entropy(std::vector<int>(40, 2)), 0.0);
  EXPECT_NEAR(ev::action_entropy(std::vector<int>{0, 1, 2, 3, 4}), std::log(5.0), 1e-12);
  std::vector<int> skew(80, 0);
  for (int a = 1; a < 5; ++a) skew.insert(skew.end(), 5, a);
  EXPECT_NEAR(ev::action_entropy(skew), 0.7777, 1e-4);
}

TEST(Metrics, BootstrapCiBracketsMean) {
  std::vector<double> xs(200);
  std::iota(xs.begin(), xs.end(), 0.0);
  const ev::Interval ci = ev::bootstrap_mean_ci(xs, 1);
  EXPECT_LT(ci.lo, 99.5);
  EXPECT_GT(ci.hi, 99.5);
  const ev::Interval again = ev::bootstrap_mean_ci(xs, 1);
  EXPECT_EQ(ci.lo, again.lo);
  EXPECT_EQ(ci.hi, again.hi);
}

TEST(OnlineMetrics, LogRoundTrip) {
  std::vector<online::StepRecord> recs(50);
  std::vector<json> log;
  std::size_t size = 20;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    auto& r = recs[i];
    r.step = static_cast<std::int64_t>(i);
    r.queries_issued = i % 10 == 9 ? 5 : 0;
    r.labels_added = r.queries_issued;
    size += r.labels_added;
    r.labeled_size = size;
    r.blocks_run = i == 39 ? 1 : 0;
    r.safe = i != 3;
    r.latency_s = 0.001 * static_cast<double>(i % 4);
    log.push_back(r.to_json());
  }
  const online::OnlineMetrics direct = online::online_metrics(recs, 20, 5.0);
  const online::OnlineMetrics parsed = ev::online_metrics_from_log(log, 20, 5.0);
  EXPECT_EQ(direct.to_json(), parsed.to_json());
  EXPECT_DOUBLE_EQ(parsed.query_rate, 25.0 / 50.0);  // each label is one pooled step
  EXPECT_DOUBLE_EQ(parsed.safety_rate, 49.0 / 50.0);
  EXPECT_EQ(parsed.updates, 1u);
  EXPECT_EQ(parsed.final_buffer - parsed.initial_buffer, parsed.labels_added);
  EXPECT_EQ(parsed.labels_added, parsed.batch_query_total);

  auto missing = log;
  missing.erase(missing.begin() + 10);
  EXPECT_THROW(ev::online_metrics_from_log(missing, 20, 5.0), std::invalid_argument);
  auto cut = log;
  cut[4].erase("labeled_size");
  EXPECT_THROW(ev::online_metrics_from_log(cut, 20, 5.0), std::invalid_argument);
}

TEST(EvalRecord, AggregatesRecomputeFromSeries) {
  twin::Trajectory a, b;
  const State s = normal_state();
  State hot = s;
  hot[kHeartRate] = 0.75;
  a.states = {s, s, s};
  a.actions = {kMedA, kPlacebo};
  a.rewards = {1.0, 2.0};
  b.states = {hot, hot};
  b.actions = {kMedB};
  b.rewards = {-1.0};
  const ev::EvalRecord r = ev::make_eval_record({a, b}, 0.99, 4, "fp", "toy");
  EXPECT_EQ(r.returns, (std::vector<double>{1.0 + 0.99 * 2.0, -1.0}));
  EXPECT_EQ(r.safe, (std::vector<std::uint8_t>{1, 1, 0}));
  EXPECT_EQ(r.action_histogram[kMedA], 1.0);
  EXPECT_EQ(r.action_histogram[kMedB], 1.0);

  const ev::EvalRecord back = ev::EvalRecord::from_json(r.to_json());
  EXPECT_EQ(back.to_json(), r.to_json());
  EXPECT_EQ(back.summary(), r.summary());
  EXPECT_NEAR(r.summary()["mean_return"].get<double>(), (2.98 - 1.0) / 2.0, 1e-12);
  EXPECT_EQ(r.episodes_csv().substr(0, 15), "episode,return\n");
  EXPECT_EQ(count(r.episodes_csv(), "\n"), 3u);
}

TEST(FeatureImportance, IgnoredFeatureAndNormalization) {
  // Linear Q with no weight on age.
  const ev::QFn q = [](const std::vector<State>& xs) {
    std::vector<ActionValues> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      for (std::size_t a = 0; a < kNumActions; ++a) {
        double v = 0.0;
        for (std::size_t f = 0; f < kStateDim; ++f) {
          if (f != kAge) v += xs[i][f] * static_cast<double>((f + 1) * (a + 1) % 7);
        }
        out[i][a] = v;
      }
    }
    return out;
  };
  Rng rng(12);
  std::vector<State> states;
  for (int i = 0; i < 200; ++i) states.push_back(cohort::sample_initial_state(rng));
  const auto fi = ev::feature_importance(q, states, 3);
  ASSERT_EQ(fi.size(), kStateDim);
  double total = 0.0;
  for (const auto& f : fi) {
    total += f.percent;
    if (f.feature == kAge) EXPECT_EQ(f.percent, 0.0);
  }
  EXPECT_NEAR(total, 100.0, 1e-6);
  for (std::size_t i = 1; i < fi.size(); ++i) EXPECT_GE(fi[i - 1].percent, fi[i].percent);
  states.resize(99);
  EXPECT_THROW(ev::feature_importance(q, states, 3), std::invalid_argument);
}

TEST(Report, NormalStateHasNoFlags) {
  const std::string html = ev::render_report(report_for(normal_state()));
  EXPECT_EQ(count(html, "class=\"abnormal\""), 0u);
  EXPECT_NE(html.find("All gated vitals are within range."), std::string::npos);
}

TEST(Report, HeartRateFlaggedAndNamed) {
  State s = normal_state();
  s[kHeartRate] = 0.75;
  const std::string html = ev::render_report(report_for(s));
  EXPECT_EQ(count(html, "class=\"abnormal\""), 1u);
  const auto rationale = html.find("id=\"rationale\"");
  ASSERT_NE(rationale, std::string::npos);
  EXPECT_NE(html.find("heart rate", rationale), std::string::npos);
}

TEST(Report, SectionOrderRowsAndDeterminism) {
  const ev::ReportInputs in = report_for(normal_state());
  const std::string html = ev::render_report(in);
  const std::size_t profile = html.find("id=\"profile\""), recommendation = html.find("id=\"recommendation\""),
                    comparison = html.find("id=\"comparison\""), rationale = html.find("id=\"rationale\""),
                    svg = html.find("<svg");
  EXPECT_LT(profile, recommendation);
  EXPECT_LT(recommendation, comparison);
  EXPECT_LT(comparison, rationale);
  EXPECT_LT(rationale, svg);
  ASSERT_NE(svg, std::string::npos);
  const std::string table = html.substr(comparison, rationale - comparison);
  EXPECT_EQ(count(table, "<tr") - 1, 5u);  // header row excluded
  EXPECT_EQ(count(table, "class=\"recommended\""), 1u);
  EXPECT_NE(html.find("0.88"), std::string::npos);  // confidence 1 - u
  EXPECT_EQ(ev::render_report(in), html);

  ev::ReportInputs short_in = in;
  short_in.projections.pop_back();
  EXPECT_THROW(ev::render_report(short_in), std::invalid_argument);
  ev::ReportInputs no_plan = in;
  no_plan.plan_trajectory.clear();
  EXPECT_THROW(ev::render_report(no_plan), std::invalid_argument);
}
