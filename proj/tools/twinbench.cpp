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

// twinbench command-line driver.

#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "twinbench/cohort/dataset.hpp"
#include "twinbench/common/io.hpp"
#include "twinbench/deid/deid.hpp"
#include "twinbench/eval/metrics.hpp"
#include "twinbench/eval/report.hpp"
#include "twinbench/online/stream.hpp"
#include "twinbench/outcome/outcome.hpp"
#include "twinbench/pipeline/pipeline.hpp"
#include "twinbench/policy/offline.hpp"
#include "twinbench/server/server.hpp"
#include "twinbench/twin/train.hpp"

namespace fs = std::filesystem;
using namespace twinbench;
using nlohmann::json;

namespace {

struct Split {
  std::vector<Transition> rows, train, validation;
  cohort::Split ids;
};

Split load_split(const fs::path& data, std::uint64_t seed) {
  Split s;
  if (data.extension() == ".jsonl" && data.filename().string().find("transitions") != std::string::npos) {
    s.rows = cohort::read_transitions(data);
  } else {
    s.rows = deid::extract_transitions(read_jsonl(data));
  }
  s.ids = cohort::split_by_patient(cohort::patient_ids(s.rows), seed);
  s.train = cohort::select_patients(s.rows, s.ids.train);
  s.validation = cohort::select_patients(s.rows, s.ids.validation);
  return s;
}

outcome::RewardNormStats stats_for(const Split& s) {
  return outcome::RewardNormStats::fit(s.train, outcome::split_fingerprint(s.ids.train));
}

void print(const json& j) { std::cout << j.dump(2) << std::endl; }

std::atomic<bool> g_interrupted{false};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"twinbench: digital-twin offline-to-online decision-support workbench"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Generate a synthetic cohort with raw identifiers");
  int n_patients = 2000;
  std::uint64_t seed = 0;
  fs::path out_dir = "work";
  gen->add_option("--patients", n_patients, "Number of patients")->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "Generator seed");
  gen->add_option("--out", out_dir, "Output directory");
  double age_offset = 0.0;
  gen->add_option("--age-offset", age_offset, "Initial age shift (drifted cohort)");

  // deid
  auto* dei = app.add_subcommand("deid", "De-identify raw records and check k-anonymity");
  fs::path raw_in = "work/raw.jsonl", deid_out = "work/deid.jsonl", policy_path = "config/deid_policy.txt",
           audit_path = "work/deid_audit.jsonl";
  dei->add_option("--in", raw_in, "Raw records (JSON Lines)");
  dei->add_option("--policy", policy_path, "De-identification policy file");
  dei->add_option("--out", deid_out, "De-identified records (JSON Lines)");
  dei->add_option("--audit", audit_path, "Audit trail (JSON Lines)");

  // train-twin
  auto* ttw = app.add_subcommand("train-twin", "Train the five-member dynamics ensemble");
  fs::path data = "work/deid.jsonl", twin_dir = "work/twin";
  std::size_t epochs = 8;
  ttw->add_option("--data", data, "De-identified records");
  ttw->add_option("--seed", seed, "Split seed");
  ttw->add_option("--epochs", epochs, "Maximum epochs per member");
  ttw->add_option("--out", twin_dir, "Output directory");

  // train-outcome
  auto* tou = app.add_subcommand("train-outcome", "Train the adversarial outcome model");
  fs::path outcome_dir = "work/outcome";
  std::vector<double> lambdas{0.1};
  tou->add_option("--data", data, "De-identified records");
  tou->add_option("--seed", seed, "Split and init seed");
  tou->add_option("--lambda", lambdas, "Adversarial weight grid");
  tou->add_option("--out", outcome_dir, "Output directory");

  // train-policy
  auto* tpo = app.add_subcommand("train-policy", "Train BCQ, the online Q ensemble and the baselines");
  fs::path policy_dir = "work/policy";
  std::size_t q_steps = 20000;
  bool with_baselines = true;
  tpo->add_option("--data", data, "De-identified records");
  tpo->add_option("--twin", twin_dir, "Twin ensemble directory");
  tpo->add_option("--outcome", outcome_dir, "Outcome model directory");
  tpo->add_option("--seed", seed, "Seed");
  tpo->add_option("--steps", q_steps, "Gradient steps per Q network");
  tpo->add_flag("!--no-baselines", with_baselines, "Skip DoubleDQN/NFQ/CQL");
  tpo->add_option("--out", policy_dir, "Output directory");

  // eval-offline
  auto* evo = app.add_subcommand("eval-offline", "Evaluate trained policies in the twin environment");
  std::vector<fs::path> policies;
  std::size_t starts = 500;
  fs::path eval_out = "work/eval";
  int resamples = 10000;
  evo->add_option("--policy", policies, "Policy directories")->required();
  evo->add_option("--twin", twin_dir, "Twin ensemble directory");
  evo->add_option("--outcome", outcome_dir, "Outcome model directory");
  evo->add_option("--starts", starts, "Evaluation episodes");
  evo->add_option("--seed", seed, "Start-state and bootstrap seed");
  evo->add_option("--resamples", resamples, "Bootstrap resamples");
  evo->add_option("--out", eval_out, "Output directory (JSON summary + CSV per policy)");

  // stream / serve
  auto* strm = app.add_subcommand("stream", "Run the online loop");
  auto* srv = app.add_subcommand("serve", "Run the online loop behind the control server");
  fs::path ensemble_dir = "work/policy/q_ensemble", bcq_dir = "work/policy/bcq", log_path, ckpt_dir, audit_stream;
  double tau = 0.2, rate = 10.0, timeout_s = 30.0;
  std::size_t k = 20;
  std::int64_t steps = 2000, drift_at = 1000;
  std::string expert = "simulated", mode_name = "ensemble", host = "127.0.0.1";
  bool unpaced = false, keep_serving = false;
  int port = 8080;
  for (auto* sc : {strm, srv}) {
    sc->add_option("--policy", ensemble_dir, "Q ensemble directory (or single DQN policy with --mode single-head)");
    sc->add_option("--bcq", bcq_dir, "BCQ policy directory (behavior model and tau_supp)");
    sc->add_option("--twin", twin_dir, "Twin ensemble directory");
    sc->add_option("--outcome", outcome_dir, "Outcome model directory");
    sc->add_option("--data", data, "De-identified records (replay pool and initial labels)");
    sc->add_option("--seed", seed, "Split and stream seed");
    sc->add_option("--tau", tau, "Query threshold");
    sc->add_option("--rate", rate, "Stream rate (Hz)");
    sc->add_option("--k", k, "Query batch size");
    sc->add_option("--steps", steps, "Stream steps");
    sc->add_option("--drift-at", drift_at, "Switch to the age-shifted generator after this many transitions");
    sc->add_option("--expert", expert, "simulated|human")->check(CLI::IsMember({"simulated", "human"}));
    sc->add_option("--expert-timeout", timeout_s, "Human answer timeout (s)");
    sc->add_option("--mode", mode_name, "ensemble|single-head")->check(CLI::IsMember({"ensemble", "single-head"}));
    sc->add_option("--log", log_path, "Per-step JSON Lines log");
    sc->add_option("--audit", audit_stream, "Control/audit JSON Lines");
    sc->add_option("--checkpoint", ckpt_dir, "Checkpoint directory written on halt");
    sc->add_flag("--unpaced", unpaced, "Run as fast as possible");
  }
  srv->add_option("--host", host, "Bind address");
  srv->add_option("--port", port, "Bind port (0 = any)");
  srv->add_flag("--keep-serving", keep_serving, "Keep serving after the stream ends (Ctrl-C to stop)");

  // report
  auto* rep = app.add_subcommand("report", "Render the HTML patient report");
  int patient = 0;
  fs::path report_out;
  int horizon = 10;
  rep->add_option("--patient", patient, "Patient id in the data file")->required();
  rep->add_option("--data", data, "De-identified records");
  rep->add_option("--policy", ensemble_dir, "Q ensemble directory");
  rep->add_option("--twin", twin_dir, "Twin ensemble directory");
  rep->add_option("--outcome", outcome_dir, "Outcome model directory");
  rep->add_option("--horizon", horizon, "Projection horizon");
  rep->add_option("--out", report_out, "Output HTML (stdout when empty)");

  // pipeline
  auto* pip = app.add_subcommand("pipeline", "Generate, de-identify and train everything into one directory");
  pip->add_option("--patients", n_patients, "Number of patients");
  pip->add_option("--seed", seed, "Seed");
  pip->add_option("--epochs", epochs, "Twin epochs per member");
  pip->add_option("--steps", q_steps, "Gradient steps per Q network");
  pip->add_option("--policy-file", policy_path, "De-identification policy file");
  pip->add_option("--out", out_dir, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      cohort::CohortConfig cc;
      cc.n_patients = n_patients;
      cc.seed = seed;
      cc.age_offset = age_offset;
      const cohort::Cohort c = cohort::generate_cohort(cc);
      fs::create_directories(out_dir);
      write_jsonl(out_dir / "raw.jsonl", pipeline::raw_records(c));
      const auto rows = c.transitions();
      cohort::write_transitions(out_dir / "transitions.jsonl", rows);
      cohort::DatasetManifest m;
      m.seed = seed;
      m.effect_table_sha256 = cohort::EffectTable::standard_hash();
      m.n_patients = n_patients;
      m.n_transitions = rows.size();
      m.split = cohort::split_by_patient(cohort::patient_ids(rows), seed);
      m.transitions_sha256 = sha256_hex(read_text(out_dir / "transitions.jsonl"));
      write_json(out_dir / "manifest.json", m.to_json());
      print({{"patients", n_patients}, {"transitions", rows.size()}, {"out", out_dir.string()}});
    } else if (*dei) {
      const deid::DeidPolicy pol = deid::DeidPolicy::load(policy_path);
      const deid::AuditLog audit(audit_path);
      const deid::PipelineResult r = deid::run_pipeline(read_jsonl(raw_in), pol, &audit);
      write_jsonl(deid_out, r.records);
      print({{"input", r.input_count},
             {"rejected", r.rejected},
             {"suppressed", r.suppressed},
             {"output", r.records.size()},
             {"k", r.final_report.k},
             {"k_anonymous", r.final_report.pass},
             {"policy_hash", pol.hash()}});
    } else if (*ttw) {
      const Split s = load_split(data, seed);
      twin::TrainConfig tc;
      tc.max_epochs = epochs;
      std::vector<twin::TrainResult> results;
      const twin::TwinEnsemble ens =
          twin::train_ensemble(cohort::episodes(s.train), cohort::episodes(s.validation), tc, &results);
      ens.save(twin_dir, {{"split_fingerprint", outcome::split_fingerprint(s.ids.train)}});
      json out = json::array();
      for (const auto& r : results)
        out.push_back({{"best_epoch", r.best_epoch}, {"best_validation_loss", r.best_validation_loss}});
      print({{"members", out}, {"out", twin_dir.string()}});
    } else if (*tou) {
      const Split s = load_split(data, seed);
      const auto stats = stats_for(s);
      std::vector<outcome::OutcomeTrainResult> results;
      const outcome::OutcomeModel m =
          outcome::select_outcome(s.train, s.validation, stats, lambdas, seed, outcome::OutcomeTrainConfig{}, &results);
      m.save(outcome_dir);
      const outcome::OutcomeEvaluation ev = outcome::evaluate_outcome(m, s.validation);
      print({{"lambda", m.lambda()}, {"validation_r2", ev.r2}, {"validation_mae", ev.mae}, {"ece", ev.ece},
             {"out", outcome_dir.string()}});
    } else if (*tpo) {
      const Split s = load_split(data, seed);
      const auto stats = stats_for(s);
      const twin::TwinEnsemble ens = twin::TwinEnsemble::load(twin_dir);
      const outcome::OutcomeModel om = outcome::OutcomeModel::load(outcome_dir);
      const policy::OfflineData d = policy::make_offline_data(s.train, stats);
      policy::QTrainConfig qc;
      qc.steps = q_steps;
      policy::BcqSelection sel;
      policy::OfflinePolicy bcq =
          policy::train_bcq(d, ens, om, pipeline::validation_starts(s.validation, 200), seed, qc, policy::kTauGrid, &sel);
      bcq.reward_stats_fingerprint = stats.split_fingerprint;
      bcq.save(policy_dir / "bcq");
      policy::train_q_ensemble(bcq, d, qc).save(policy_dir / "q_ensemble", {{"tau_supp", bcq.tau_supp}});
      std::vector<policy::PolicyKind> kinds{policy::PolicyKind::kDqn};
      if (with_baselines)
        kinds.insert(kinds.end(), {policy::PolicyKind::kDoubleDqn, policy::PolicyKind::kNfq, policy::PolicyKind::kCql});
      for (auto kind : kinds) {
        policy::OfflinePolicy p = policy::train_baseline(kind, d, seed, qc);
        p.reward_stats_fingerprint = stats.split_fingerprint;
        std::string name = policy::kind_name(kind);
        for (auto& c : name) c = static_cast<char>(std::tolower(c));
        p.save(policy_dir / name);
      }
      print({{"tau_supp", sel.tau_supp}, {"validation_returns", sel.validation_returns}, {"out", policy_dir.string()}});
    } else if (*evo) {
      const twin::TwinEnsemble ens = twin::TwinEnsemble::load(twin_dir);
      const outcome::OutcomeModel om = outcome::OutcomeModel::load(outcome_dir);
      const std::vector<State> ts = pipeline::test_starts(seed, starts);
      fs::create_directories(eval_out);
      json summary = json::array();
      for (const auto& dir : policies) {
        const policy::OfflinePolicy p = policy::OfflinePolicy::load(dir);
        const policy::PolicyEvaluation ev = policy::evaluate_policy(ens, om, p.fn(), ts, p.gamma, seed, resamples);
        const auto trajs = twin::rollout(ens, om, p.fn(), ts, kHorizon);
        const eval::EvalRecord rec =
            eval::make_eval_record(trajs, p.gamma, seed, p.reward_stats_fingerprint, policy::kind_name(p.kind));
        const std::string name = dir.filename().string();
        write_json(eval_out / (name + ".json"), rec.to_json());
        write_text(eval_out / (name + "_episodes.csv"), rec.episodes_csv());
        json row = ev.to_json();
        row["policy"] = name;
        summary.push_back(row);
      }
      write_json(eval_out / "summary.json", summary);
      print(summary);
    } else if (*strm || *srv) {
      const Split s = load_split(data, seed);
      const policy::OfflinePolicy bcq = policy::OfflinePolicy::load(bcq_dir);
      if (!bcq.behavior) throw std::runtime_error("BCQ checkpoint has no behavior model");
      const online::LoopMode mode = mode_name == "ensemble" ? online::LoopMode::kEnsemble : online::LoopMode::kSingleHead;
      online::OnlineModels models{twin::TwinEnsemble::load(twin_dir), outcome::OutcomeModel::load(outcome_dir), {},
                                  bcq.behavior->clone()};
      if (mode == online::LoopMode::kEnsemble) {
        for (auto& h : policy::QEnsemble::load(ensemble_dir).heads()) models.heads.push_back(h.clone());
      } else {
        models.heads.push_back(policy::OfflinePolicy::load(ensemble_dir).q.clone());
      }
      online::StreamConfig sc;
      sc.steps = steps;
      sc.drift_at = drift_at;
      sc.hot.tau = tau;
      sc.hot.rate_hz = rate;
      sc.k = k;
      sc.tau_supp = bcq.tau_supp;
      sc.expert = expert == "human" ? online::ExpertMode::kHuman : online::ExpertMode::kSimulated;
      sc.human_timeout_s = timeout_s;
      sc.paced = !unpaced;
      sc.seed = seed;
      sc.log_path = log_path;
      sc.audit_path = audit_stream;
      sc.checkpoint_dir = ckpt_dir;
      std::vector<Transition> pool(s.train.begin(),
                                   s.train.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(1000, s.train.size())));
      online::StreamLoop loop(std::move(models), sc, mode, pool, s.train);
      std::unique_ptr<server::ControlServer> server;
      if (*srv) {
        server = std::make_unique<server::ControlServer>(loop, server::ServerConfig{host, port});
        server->start();
        std::cerr << "serving on http://" << host << ":" << server->port() << std::endl;
      }
      std::signal(SIGINT, [](int) { g_interrupted = true; });
      std::thread watcher([&loop] {
        while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        loop.channel().submit("halt", {{"reason", "interrupt"}});
      });
      const online::OnlineMetrics m = loop.run();
      print(m.to_json(true));
      if (server && keep_serving) {
        while (!g_interrupted) {
          loop.process_control();
          std::this_thread::sleep_for(std::chrono::milliseconds(20));
        }
      }
      g_interrupted = true;
      watcher.join();
      if (server) server->stop();
    } else if (*rep) {
      const Split s = load_split(data, 0);
      const State* st = nullptr;
      for (const auto& t : s.rows) {
        if (t.patient_id == patient) st = &t.state;
      }
      if (!st) throw std::runtime_error("patient " + std::to_string(patient) + " not found in " + data.string());
      const policy::QEnsemble qe = policy::QEnsemble::load(ensemble_dir);
      const auto act = [&qe](const State& x) { return policy::ensemble_action(qe.head_values(x)); };
      const twin::PolicyFn plan = [&act](const std::vector<State>& xs) {
        std::vector<int> out;
        for (const auto& x : xs) out.push_back(act(x));
        return out;
      };
      const int a = act(*st);
      const online::SafetyVerdict v = online::safety_gate(*st, a);
      const eval::ReportInputs in = eval::build_report_inputs(
          std::to_string(patient), *st, v.pass ? a : v.fallback, online::uncertainty(qe.head_values(*st)).u,
          twin::TwinEnsemble::load(twin_dir), outcome::OutcomeModel::load(outcome_dir), plan, horizon);
      const std::string html = eval::render_report(in);
      if (report_out.empty()) {
        std::cout << html;
      } else {
        write_text(report_out, html);
      }
    } else if (*pip) {
      pipeline::OfflineConfig oc;
      oc.n_patients = n_patients;
      oc.seed = seed;
      oc.deid = deid::DeidPolicy::load(policy_path);
      oc.twin.max_epochs = epochs;
      oc.q.steps = q_steps;
      fs::create_directories(out_dir);
      const pipeline::OfflineArtifacts a = pipeline::run_offline(oc, out_dir / "deid_audit.jsonl");
      pipeline::save_artifacts(a, out_dir);
      print({{"deid", a.deid.to_json()}, {"tau_supp", a.selection.tau_supp}, {"out", out_dir.string()}});
    }
  } catch (const std::exception& e) {
    std::cerr << "twinbench: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
