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

#include "twinbench/online/stream.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <thread>

#include "twinbench/cohort/generator.hpp"
#include "twinbench/common/io.hpp"
#include "twinbench/eval/report.hpp"
#include "twinbench/eval/metrics.hpp"
#include "twinbench/nn/checkpoint.hpp"
#include "twinbench/online/kcenter.hpp"

namespace twinbench::online {

using Clock = std::chrono::steady_clock;

State drift_inject(const State& s, double offset) {
  State out = s;
  out[kAge] = std::clamp(s[kAge] + offset, 0.0, 1.0);
  return out;
}

// ---------------------------------------------------------------- source

StreamSource::StreamSource(std::vector<Transition> replay_pool, std::int64_t drift_at, double drift_offset,
                           std::uint64_t seed, std::size_t context)
    : pool_(std::move(replay_pool)),
      drift_at_(drift_at),
      drift_offset_(drift_offset),
      seed_(seed),
      context_(context),
      gen_rng_(derive_rng(seed, 0x5354524du)) {
  if (drift_at_ < 0) throw std::invalid_argument("StreamSource: negative drift point");
  if (drift_at_ > 0 && pool_.empty()) throw std::invalid_argument("StreamSource: empty replay pool");
}

void StreamSource::start_generated_patient() {
  gen_state_ = drift_inject(cohort::sample_initial_state(gen_rng_), drift_offset_);
  gen_t_ = 0;
  gen_active_ = true;
  ++gen_patient_;
  hist_states_.clear();
  hist_actions_.clear();
}

StreamItem StreamSource::next() {
  StreamItem item;
  item.index = produced_;
  if (produced_ < drift_at_) {
    const Transition& t = pool_[pool_pos_ % pool_.size()];
    ++pool_pos_;
    if (t.patient_id != last_patient_ || t.t == 0) {
      hist_states_.clear();
      hist_actions_.clear();
    }
    last_patient_ = t.patient_id;
    item.transition = t;
  } else {
    if (!gen_active_) start_generated_patient();
    Transition t;
    t.patient_id = 1000000 + gen_patient_;
    t.t = gen_t_;
    t.state = gen_state_;
    t.action = cohort::behavior_action(gen_state_, gen_rng_);
    const cohort::StepResult r = cohort::env_step(gen_state_, t.action, gen_t_, gen_rng_);
    t.reward = r.reward;
    t.parts = r.parts;
    t.next_state = r.next_state;
    t.done = r.done;
    item.transition = t;
    item.drifted = true;
    gen_state_ = r.next_state;
    ++gen_t_;
    if (r.done) gen_active_ = false;
  }
  item.history_states.assign(hist_states_.begin(), hist_states_.end());
  item.history_actions.assign(hist_actions_.begin(), hist_actions_.end());
  hist_states_.push_back(item.transition.state);
  hist_actions_.push_back(item.transition.action);
  while (hist_states_.size() > context_) {
    hist_states_.pop_front();
    hist_actions_.pop_front();
  }
  if (item.transition.done) {
    hist_states_.clear();
    hist_actions_.clear();
  }
  ++produced_;
  return item;
}

// ---------------------------------------------------------------- channel / bus

nlohmann::json PendingQuery::to_json() const {
  nlohmann::json st = nlohmann::json::object();
  for (std::size_t i = 0; i < kStateDim; ++i) st[std::string(feature_name(i))] = state[i];
  const double remaining = std::chrono::duration<double>(deadline - Clock::now()).count();
  return {{"id", id},
          {"origin_step", origin_step},
          {"state", st},
          {"proposed_action", std::string(action_name(proposed_action))},
          {"u", u},
          {"seconds_remaining", std::max(0.0, remaining)}};
}

std::future<nlohmann::json> ControlChannel::submit(const std::string& kind, nlohmann::json payload) {
  ControlMessage m;
  m.kind = kind;
  m.payload = std::move(payload);
  m.reply = std::make_shared<std::promise<nlohmann::json>>();
  std::future<nlohmann::json> f = m.reply->get_future();
  {
    std::lock_guard<std::mutex> lock(mu_);
    m.seq = next_seq_++;
    queue_.push_back(std::move(m));
  }
  cv_.notify_all();
  return f;
}

std::vector<ControlMessage> ControlChannel::drain() {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<ControlMessage> out(std::make_move_iterator(queue_.begin()), std::make_move_iterator(queue_.end()));
  queue_.clear();
  return out;
}

void ControlChannel::wait_until(Clock::time_point deadline) {
  std::unique_lock<std::mutex> lock(mu_);
  cv_.wait_until(lock, deadline, [&] { return !queue_.empty(); });
}

void EventBus::publish(nlohmann::json event) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    events_.emplace_back(next_++, std::move(event));
    while (events_.size() > capacity_) events_.pop_front();
  }
  cv_.notify_all();
}

std::vector<std::pair<std::uint64_t, nlohmann::json>> EventBus::since(std::uint64_t after,
                                                                      std::chrono::milliseconds timeout) {
  std::unique_lock<std::mutex> lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return closed_ || (!events_.empty() && events_.back().first > after); });
  std::vector<std::pair<std::uint64_t, nlohmann::json>> out;
  for (const auto& e : events_) {
    if (e.first > after) out.push_back(e);
  }
  return out;
}

void EventBus::close() {
  closed_ = true;
  cv_.notify_all();
}

// ---------------------------------------------------------------- records

nlohmann::json StepRecord::to_json() const {
  return {{"step", step},
          {"timestamp", timestamp},
          {"state_hash", state_hash},
          {"proposed", std::string(action_name(proposed))},
          {"emitted", std::string(action_name(emitted))},
          {"u", u},
          {"verdict", verdict.to_json()},
          {"safe", safe},
          {"queried", admitted},
          {"queries_issued", queries_issued},
          {"labels_added", labels_added},
          {"labeled_size", labeled_size},
          {"weak_size", weak_size},
          {"pool_size", pool_size},
          {"blocks_run", blocks_run},
          {"focused_run", focused_run},
          {"latency_s", latency_s}};
}

nlohmann::json OnlineMetrics::to_json(bool include_timing) const {
  nlohmann::json j = {{"steps", steps},
                      {"query_rate", query_rate},
                      {"safety_rate", safety_rate},
                      {"updates", updates},
                      {"initial_buffer", initial_buffer},
                      {"final_buffer", final_buffer},
                      {"labels_added", labels_added},
                      {"batch_query_total", batch_query_total},
                      {"forced_queries", forced_queries}};
  if (include_timing) {
    j["mean_response_s"] = mean_response_s;
    j["throughput_hz"] = throughput_hz;
    j["wall_s"] = wall_s;
  }
  return j;
}

OnlineMetrics online_metrics(const std::vector<StepRecord>& records, std::size_t initial_buffer, double wall_s) {
  OnlineMetrics m;
  m.initial_buffer = initial_buffer;
  m.final_buffer = initial_buffer;
  m.wall_s = wall_s;
  m.steps = static_cast<std::int64_t>(records.size());
  if (records.empty()) return m;
  double latency = 0.0;
  std::size_t safe = 0;
  for (const auto& r : records) {
    latency += r.latency_s;
    safe += r.safe ? 1 : 0;
    m.updates += r.blocks_run;
    m.labels_added += r.labels_added;
    m.batch_query_total += r.queries_issued;
    m.forced_queries += r.verdict.force_query ? 1 : 0;
  }
  const double n = static_cast<double>(records.size());
  m.final_buffer = records.back().labeled_size;
  m.query_rate = static_cast<double>(m.batch_query_total) / n;
  m.mean_response_s = latency / n;
  m.safety_rate = static_cast<double>(safe) / n;
  m.throughput_hz = wall_s > 0.0 ? n / wall_s : 0.0;
  return m;
}

// ---------------------------------------------------------------- loop internals

namespace {

std::string state_hash(const State& s) {
  std::string buf;
  char tmp[32];
  for (double v : s) {
    std::snprintf(tmp, sizeof tmp, "%.17g,", v);
    buf += tmp;
  }
  return sha256_hex(buf).substr(0, 16);
}

nn::ParamList subtract(const nn::ParamList& all, const nn::ParamList& remove) {
  nn::ParamList out;
  for (const auto& p : all) {
    const bool drop = std::any_of(remove.begin(), remove.end(), [&](const nn::NamedVar& r) { return r.name == p.name; });
    if (!drop) out.push_back(p);
  }
  return out;
}

nn::ParamList outcome_head_params(const outcome::OutcomeModel& m) {
  return subtract(m.online_params(), m.discriminator_params());
}

nn::AdamW make_opt(const nn::ParamList& ps, double lr) {
  nn::AdamWConfig cfg;
  cfg.learning_rate = lr;
  return nn::AdamW(ps, cfg);
}

ReplayItem to_replay(const StreamItem& item, double reward_norm, double weight, std::int64_t now,
                     const std::string& provenance) {
  ReplayItem r;
  r.state = item.transition.state;
  r.action = item.transition.action;
  r.reward = reward_norm;
  r.next_state = item.transition.next_state;
  r.done = item.transition.done;
  r.history_states = item.history_states;
  r.history_actions = item.history_actions;
  r.weight = weight;
  r.collected_at = now;
  r.provenance = provenance;
  return r;
}

bool finite_loss(const nn::Var& loss) { return std::isfinite(loss.item()); }

}  // namespace

struct StreamLoop::UpdateState {
  std::vector<nn::AdamW> q_opt;
  std::vector<policy::TargetNetworkPair> targets;
  std::vector<EmaShadow> q_ema;
  std::vector<nn::AdamW> dyn_opt;
  std::vector<EmaShadow> dyn_ema;
  nn::AdamW head_opt;
  nn::AdamW disc_opt;
  EmaShadow outcome_ema;
  std::size_t skipped = 0;
};

StreamLoop::StreamLoop(OnlineModels models, StreamConfig config, LoopMode mode, std::vector<Transition> replay_pool,
                       std::vector<Transition> initial_labeled)
    : models_(std::move(models)),
      config_(std::move(config)),
      mode_(mode),
      hot_(config_.hot),
      source_(std::move(replay_pool), config_.drift_at, config_.drift_offset, config_.seed, config_.context),
      rng_(derive_rng(config_.seed, 0x4c4f4f50u)),
      upd_(std::make_unique<UpdateState>()) {
  hot_.validate();
  if (config_.k == 0) throw std::invalid_argument("StreamLoop: k must be at least 1");
  if (config_.update_every == 0) throw std::invalid_argument("StreamLoop: update_every must be at least 1");
  if (mode_ == LoopMode::kEnsemble && models_.heads.size() < 2)
    throw std::invalid_argument("StreamLoop: ensemble mode needs at least two heads");
  if (models_.heads.empty()) throw std::invalid_argument("StreamLoop: no Q heads");
  if (models_.twin.size() == 0) throw std::invalid_argument("StreamLoop: empty twin ensemble");

  for (const auto& h : models_.heads) {
    upd_->q_opt.push_back(make_opt(h.params(), config_.learning_rate));
    upd_->targets.emplace_back(h, hot_.rho);
    upd_->q_ema.emplace_back(h.params());
  }
  for (const auto& m : models_.twin.members()) {
    upd_->dyn_opt.push_back(make_opt(m.online_params(), config_.learning_rate));
    upd_->dyn_ema.emplace_back(m.online_params());
  }
  upd_->head_opt = make_opt(outcome_head_params(models_.outcome), config_.learning_rate);
  upd_->disc_opt = make_opt(models_.outcome.discriminator_params(), config_.learning_rate);
  upd_->outcome_ema = EmaShadow(models_.outcome.online_params());
  models_.outcome.set_lambda(hot_.lambda);

  // Seed B_L with offline transitions, each with the preceding tokens of its trajectory.
  const std::size_t n0 = std::min(config_.initial_labeled, initial_labeled.size());
  std::deque<State> hs;
  std::deque<int> ha;
  int last = -1;
  for (std::size_t i = 0; i < n0; ++i) {
    const Transition& t = initial_labeled[i];
    if (t.patient_id != last || t.t == 0) {
      hs.clear();
      ha.clear();
    }
    last = t.patient_id;
    StreamItem it;
    it.transition = t;
    it.history_states.assign(hs.begin(), hs.end());
    it.history_actions.assign(ha.begin(), ha.end());
    buffers_.add_labeled(to_replay(it, models_.outcome.stats().normalize(t.reward), 1.0, 0, "offline"));
    hs.push_back(t.state);
    ha.push_back(t.action);
    while (hs.size() > config_.context) {
      hs.pop_front();
      ha.pop_front();
    }
  }
  initial_labeled_ = buffers_.labeled().size();
  if (!config_.log_path.empty()) {
    if (config_.log_path.has_parent_path()) std::filesystem::create_directories(config_.log_path.parent_path());
    log_.open(config_.log_path, std::ios::app);
    if (!log_) throw std::runtime_error("StreamLoop: cannot open log " + config_.log_path.string());
  }
  publish_snapshot();
}

StreamLoop::~StreamLoop() { events_.close(); }

std::vector<std::uint64_t> StreamLoop::frozen_checksums() const {
  std::vector<std::uint64_t> out;
  for (const auto& m : models_.twin.members()) out.push_back(nn::checksum(m.frozen_params()));
  out.push_back(nn::checksum(subtract(models_.outcome.params(), models_.outcome.online_params())));
  out.push_back(nn::checksum(models_.behavior.params()));
  return out;
}

void StreamLoop::write_audit(nlohmann::json entry) {
  entry["step"] = step_;
  if (!config_.audit_path.empty()) append_jsonl(config_.audit_path, entry);
  audit_.push_back(std::move(entry));
}

void StreamLoop::add_label(const StreamItem& item, int action, double weight, const std::string& provenance,
                           StepRecord& rec) {
  StreamItem labeled = item;
  double reward = item.transition.reward;
  if (action != item.transition.action) {
    // Expert disagreed with the logged action: the label outcome is drawn from the generator.
    Rng r = derive_rng(config_.seed, 0x48554d41u, static_cast<std::uint64_t>(item.index));
    const cohort::StepResult res = cohort::env_step(item.transition.state, action, item.transition.t, r);
    labeled.transition.action = action;
    labeled.transition.next_state = res.next_state;
    labeled.transition.done = res.done;
    reward = res.reward;
  }
  buffers_.add_labeled(to_replay(labeled, models_.outcome.stats().normalize(reward), weight, step_, provenance));
  ++rec.labels_added;
  ++labels_added_;
  ++labels_since_block_;
}

void StreamLoop::admit(const StreamItem& item, double u, int proposed) {
  pool_.push_back(PoolEntry{item, u, proposed, step_});
}

void StreamLoop::issue_queries(StepRecord& rec) {
  // Stale candidates leave the pool before selection.
  std::erase_if(pool_, [&](const PoolEntry& e) { return step_ - e.admitted_at > config_.pool_staleness; });
  if (pool_.size() < config_.k) return;
  std::vector<State> pts;
  std::vector<double> w;
  for (const auto& e : pool_) {
    pts.push_back(e.item.transition.state);
    w.push_back(e.u);
  }
  const std::vector<std::size_t> chosen = kcenter_select(pts, w, config_.k);
  std::vector<bool> taken(pool_.size(), false);
  for (std::size_t idx : chosen) {
    taken[idx] = true;
    const PoolEntry& e = pool_[idx];
    ++rec.queries_issued;
    ++batch_query_total_;
    if (config_.expert == ExpertMode::kSimulated) {
      add_label(e.item, e.item.transition.action, e.u, "simulated", rec);
    } else {
      PendingQuery q;
      q.id = next_query_id_++;
      q.origin_step = step_;
      q.state = e.item.transition.state;
      q.proposed_action = e.proposed;
      q.u = e.u;
      q.deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(
                                      std::chrono::duration<double>(config_.human_timeout_s));
      q.item = e.item;
      pending_.emplace(q.id, std::move(q));
    }
  }
  std::vector<PoolEntry> rest;
  for (std::size_t i = 0; i < pool_.size(); ++i) {
    if (!taken[i]) rest.push_back(std::move(pool_[i]));
  }
  pool_ = std::move(rest);
}

void StreamLoop::resolve_human_queries(StepRecord& rec) {
  const auto now = Clock::now();
  for (auto it = pending_.begin(); it != pending_.end();) {
    if (now >= it->second.deadline) {
      add_label(it->second.item, it->second.item.transition.action, it->second.u, "fallback", rec);
      write_audit({{"event", "query_timeout"}, {"query_id", it->first}, {"provenance", "fallback"}});
      closed_queries_[it->first] = "fallback";
      it = pending_.erase(it);
    } else {
      ++it;
    }
  }
}

nlohmann::json StreamLoop::handle(const ControlMessage& m) {
  const nlohmann::json& p = m.payload;
  if (m.kind == "set_param") {
    if (!p.contains("name") || !p.contains("value")) return {{"ok", false}, {"error", "set_param needs name and value"}};
    const std::string name = p["name"].get<std::string>();
    TierResult res;
    try {
      const double old_gamma = hot_.gamma;
      res = apply_hot_param(hot_, name, p["value"], step_);
      if (res.accepted && res.tier == 2) {
        focused_pending_ = res.focused_steps;
        focused_done_ = 0;
        retarget_ = hot_.gamma != old_gamma;
        focused_outcome_ = name == "lambda";
        for (auto& t : upd_->targets) t.set_rho(hot_.rho);
        models_.outcome.set_lambda(hot_.lambda);
      }
    } catch (const std::exception& e) {
      write_audit({{"event", "param_rejected"}, {"name", name}, {"error", e.what()}});
      return {{"ok", false}, {"code", parameter_tier(name) == 0 ? "unknown" : "invalid"}, {"error", e.what()}};
    }
    write_audit({{"event", res.accepted ? "param_applied" : "param_rejected"}, {"result", res.to_json()}});
    nlohmann::json out = res.to_json();
    out["ok"] = res.accepted;
    if (!res.accepted) {
      out["code"] = "retrain_required";
      out["error"] = res.message;
    }
    return out;
  }
  if (m.kind == "answer_query") {
    if (!p.contains("id") || !p["id"].is_number_integer())
      return {{"ok", false}, {"code", "malformed"}, {"error", "answer needs an integer id"}};
    const std::int64_t id = p["id"].get<std::int64_t>();
    auto it = pending_.find(id);
    if (it == pending_.end()) {
      auto closed = closed_queries_.find(id);
      if (closed == closed_queries_.end()) return {{"ok", false}, {"code", "unknown"}, {"error", "unknown query id"}};
      if (closed->second == "human") return {{"ok", false}, {"code", "duplicate"}, {"error", "query already answered"}};
      return {{"ok", false}, {"code", "expired"}, {"error", "query expired; fallback label stored"}};
    }
    if (Clock::now() >= it->second.deadline)
      return {{"ok", false}, {"code", "expired"}, {"error", "query expired; fallback label stored"}};
    int action = -1;
    if (p.contains("action") && p["action"].is_string()) action = action_from_name(p["action"].get<std::string>());
    else if (p.contains("action") && p["action"].is_number_integer()) action = p["action"].get<int>();
    if (!valid_action(action)) return {{"ok", false}, {"code", "malformed"}, {"error", "action must be 0-4 or a treatment name"}};
    StepRecord scratch;
    add_label(it->second.item, action, it->second.u, "human", scratch);
    if (!records_.empty()) {
      records_.back().labels_added += scratch.labels_added;
      records_.back().labeled_size = buffers_.labeled().size();
    }
    pending_.erase(it);
    closed_queries_[id] = "human";
    return {{"ok", true}, {"id", id}, {"provenance", "human"}, {"action", std::string(action_name(action))}};
  }
  if (m.kind == "report") {
    const int pid = p.value("patient_id", -1);
    auto st = last_state_.find(pid);
    if (st == last_state_.end()) return {{"ok", false}, {"code", "unknown"}, {"error", "patient not seen in this stream"}};
    const auto act = [this](const State& x) {
      if (mode_ == LoopMode::kSingleHead) return policy::greedy_action(models_.heads.front().values(x));
      std::vector<ActionValues> hv;
      for (const auto& h : models_.heads) hv.push_back(h.values(x));
      return policy::ensemble_action(hv);
    };
    double u = 0.0;
    if (mode_ == LoopMode::kEnsemble) {
      std::vector<ActionValues> hv;
      for (const auto& h : models_.heads) hv.push_back(h.values(st->second));
      u = uncertainty(hv).u;
    } else {
      u = novelty_.score(st->second);
    }
    const twin::PolicyFn plan = [&act](const std::vector<State>& xs) {
      std::vector<int> out;
      for (const auto& x : xs) out.push_back(act(x));
      return out;
    };
    const int rec = act(st->second);
    const SafetyVerdict v = safety_gate(st->second, rec);
    const eval::ReportInputs in = eval::build_report_inputs(std::to_string(pid), st->second,
                                                            v.pass ? rec : v.fallback, u, models_.twin,
                                                            models_.outcome, plan);
    return {{"ok", true}, {"patient_id", pid}, {"html", eval::render_report(in)}};
  }
  if (m.kind == "pause") {
    paused_ = true;
    return {{"ok", true}, {"paused", true}};
  }
  if (m.kind == "resume") {
    paused_ = false;
    return {{"ok", true}, {"paused", false}};
  }
  if (m.kind == "snapshot") return snapshot();
  if (m.kind == "halt") {
    halted_ = true;
    write_audit({{"event", "halt"}, {"reason", p.value("reason", std::string("requested"))}});
    return {{"ok", true}, {"halted", true}};
  }
  return {{"ok", false}, {"error", "unknown control message: " + m.kind}};
}

void StreamLoop::apply_control(std::vector<ControlMessage> messages) {
  std::sort(messages.begin(), messages.end(), [](const auto& a, const auto& b) { return a.seq < b.seq; });
  for (auto& m : messages) {
    nlohmann::json reply;
    try {
      reply = handle(m);
    } catch (const std::exception& e) {
      reply = {{"ok", false}, {"error", e.what()}};
    }
    nlohmann::json entry = {{"event", "control"}, {"seq", m.seq}, {"kind", m.kind},
                            {"outcome", reply.value("ok", true) ? "applied" : "rejected"}};
    if (m.kind != "snapshot" && m.kind != "report") entry["payload"] = m.payload;
    if (!reply.value("ok", true)) entry["error"] = reply.value("error", std::string());
    write_audit(std::move(entry));
    if (m.reply) m.reply->set_value(std::move(reply));
  }
  if (!messages.empty()) publish_snapshot();
}

void StreamLoop::process_control() { apply_control(channel_.drain()); }

// ---------------------------------------------------------------- updates

void StreamLoop::update_heads(const std::vector<ReplayItem>& batch) {
  const std::size_t n = batch.size();
  std::vector<State> s(n), s2(n);
  std::vector<int> acts(n);
  for (std::size_t j = 0; j < n; ++j) {
    s[j] = batch[j].state;
    s2[j] = batch[j].next_state;
    acts[j] = batch[j].action;
  }
  const std::vector<ActionValues> probs = models_.behavior.probabilities(s2);
  std::vector<std::vector<int>> cands(n);
  for (std::size_t j = 0; j < n; ++j) {
    for (int a : policy::candidate_set(probs[j], hot_.candidate_n)) {
      if (probs[j][static_cast<std::size_t>(a)] >= config_.tau_supp) cands[j].push_back(a);
    }
    if (cands[j].empty()) cands[j].push_back(policy::argmax(probs[j]));
  }
  const nn::Tensor st = policy::states_tensor(s);
  const nn::Tensor st2 = policy::states_tensor(s2);
  for (std::size_t k = 0; k < models_.heads.size(); ++k) {
    const std::vector<ActionValues> mq = upd_->targets[k].min_values(st2);
    nn::Tensor y({n});
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = policy::td_target(batch[j].reward, batch[j].done, hot_.gamma, mq[j], cands[j]);
    }
    nn::Var qs = models_.heads[k].forward(st);
    nn::Var loss = nn::huber_loss(nn::gather_cols(qs, acts), y, 1.0);
    loss = nn::add(loss, nn::scale(nn::mean(nn::square(qs)), config_.q_regularization));
    if (!finite_loss(loss)) {
      ++upd_->skipped;
      write_audit({{"event", "nonfinite_loss"}, {"component", "q"}, {"head", k}});
      continue;
    }
    loss.backward();
    upd_->q_opt[k].step();
    upd_->targets[k].update(models_.heads[k]);
    upd_->q_ema[k].update(models_.heads[k].params());
  }
}

void StreamLoop::update_dynamics(const std::vector<ReplayItem>& batch) {
  // Each item forms one sequence: its history tokens then the item itself, positions from 0.
  std::size_t time = 1;
  for (const auto& it : batch) time = std::max(time, it.history_states.size() + 1);
  const std::size_t b = batch.size();
  nn::Tensor states({b * time, kStateDim});
  nn::Tensor targets({b * time, kStateDim});
  std::vector<int> actions(b * time, kPlacebo);
  std::vector<std::uint8_t> mask(b * time, 0);
  for (std::size_t i = 0; i < b; ++i) {
    const ReplayItem& it = batch[i];
    const std::size_t len = it.history_states.size() + 1;
    for (std::size_t t = 0; t < len; ++t) {
      const State& s = t + 1 < len ? it.history_states[t] : it.state;
      const int a = t + 1 < len ? it.history_actions[t] : it.action;
      const std::size_t row = i * time + t;
      std::copy(s.begin(), s.end(), states.ptr() + row * kStateDim);
      actions[row] = a;
    }
    const std::size_t last = i * time + len - 1;
    std::copy(it.next_state.begin(), it.next_state.end(), targets.ptr() + last * kStateDim);
    mask[last] = 1;
  }
  auto& members = models_.twin.members();
  for (std::size_t m = 0; m < members.size(); ++m) {
    nn::Var pred = members[m].bounded_update(states, actions, b, time);
    nn::Var loss = nn::smooth_l1_masked(pred, targets, mask, 1.0);
    if (!finite_loss(loss)) {
      ++upd_->skipped;
      write_audit({{"event", "nonfinite_loss"}, {"component", "dynamics"}, {"member", m}});
      continue;
    }
    loss.backward();
    // Only the trailing layers are stepped; stray gradients on frozen ones are dropped.
    upd_->dyn_opt[m].step();
    nn::zero_grads(members[m].frozen_params());
    upd_->dyn_ema[m].update(members[m].online_params());
  }
}

void StreamLoop::update_outcome(const std::vector<ReplayItem>& batch) {
  const std::size_t n = batch.size();
  std::vector<State> s(n);
  std::vector<int> acts(n);
  nn::Tensor y({n, 1});
  for (std::size_t j = 0; j < n; ++j) {
    s[j] = batch[j].state;
    acts[j] = batch[j].action;
    y[j] = batch[j].reward;
  }
  outcome::OutcomeModel& om = models_.outcome;
  nn::Var z = nn::detach(om.encode(policy::states_tensor(s)));
  nn::Var dloss = nn::cross_entropy(om.discriminator_logits(z), acts);
  if (!finite_loss(dloss)) {
    ++upd_->skipped;
    write_audit({{"event", "nonfinite_loss"}, {"component", "discriminator"}});
    return;
  }
  dloss.backward();
  upd_->disc_opt.step();
  nn::Var fit = nn::l1_loss(om.predict_normalized(z, acts), y);
  nn::Var loss = nn::sub(fit, nn::scale(nn::softmax_entropy(om.discriminator_logits(z)), om.lambda()));
  if (!finite_loss(loss)) {
    ++upd_->skipped;
    write_audit({{"event", "nonfinite_loss"}, {"component", "outcome"}});
    return;
  }
  loss.backward();
  upd_->head_opt.step();
  nn::zero_grads(om.discriminator_params());
  upd_->outcome_ema.update(om.online_params());
}

void StreamLoop::gradient_step(bool focused) {
  const std::vector<ReplayItem> batch = replay_sample(buffers_, hot_.batch_size, step_, rng_);
  update_heads(batch);
  if (!focused) {
    update_dynamics(batch);
    update_outcome(batch);
  } else if (focused_outcome_) {
    update_outcome(batch);
  }
  ++gradient_steps_;
}

void StreamLoop::run_block() {
  for (std::size_t i = 0; i < config_.block_steps; ++i) gradient_step(false);
  ++blocks_;
}

// ---------------------------------------------------------------- step

StepRecord StreamLoop::step() {
  const auto t0 = Clock::now();
  StepRecord rec;
  rec.step = step_;
  rec.timestamp = std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
  const StreamItem item = source_.next();
  const State& s = item.transition.state;
  rec.state_hash = state_hash(s);
  last_state_[item.transition.patient_id] = s;

  // (1) uncertainty and (2) action.
  if (mode_ == LoopMode::kEnsemble) {
    std::vector<ActionValues> hv;
    hv.reserve(models_.heads.size());
    for (const auto& h : models_.heads) hv.push_back(h.values(s));
    rec.u = uncertainty(hv).u;
    rec.proposed = policy::ensemble_action(hv);
  } else {
    rec.u = novelty_.score(s);
    rec.proposed = policy::greedy_action(models_.heads.front().values(s));
  }
  novelty_.observe(s);

  // (3) gate.
  rec.verdict = safety_gate(s, rec.proposed);
  rec.emitted = rec.verdict.pass ? rec.proposed : rec.verdict.fallback;
  rec.safe = rec.verdict.pass || rec.emitted == rec.verdict.fallback;

  // (4) pool admission.
  if (rec.u > hot_.tau || rec.verdict.force_query) {
    admit(item, rec.u, rec.proposed);
    rec.admitted = true;
  }
  // Weakly labeled copy of every transition.
  const double weak_r = models_.outcome.stats().normalize(models_.outcome.predict(s, item.transition.action));
  buffers_.add_weak(to_replay(item, weak_r, rec.u, step_, "weak"));

  // (5) batch queries.
  if (config_.expert == ExpertMode::kHuman) resolve_human_queries(rec);
  issue_queries(rec);

  // (6) fitting blocks, then any focused tier-2 work.
  while (labels_since_block_ >= config_.update_every) {
    labels_since_block_ -= config_.update_every;
    run_block();
    ++rec.blocks_run;
  }
  if (focused_pending_ > 0) {
    const std::size_t chunk = std::min(focused_pending_, config_.focused_chunk);
    for (std::size_t i = 0; i < chunk; ++i) gradient_step(true);
    focused_pending_ -= chunk;
    focused_done_ += chunk;
    if (retarget_) retarget_steps_ += chunk;
    rec.focused_run = chunk;
    if (focused_pending_ == 0) {
      retarget_ = false;
      focused_outcome_ = false;
    }
  }
  rec.latency_s = std::chrono::duration<double>(Clock::now() - t0).count();

  // (7) record.
  rec.labeled_size = buffers_.labeled().size();
  rec.weak_size = buffers_.weak().size();
  rec.pool_size = pool_.size();
  ++step_;
  records_.push_back(rec);
  const nlohmann::json j = rec.to_json();
  if (log_.is_open()) log_ << j.dump() << '\n';
  events_.publish(j);
  publish_snapshot();
  return rec;
}

OnlineMetrics StreamLoop::run() {
  const auto start = Clock::now();
  auto anchor = start;
  std::int64_t anchor_step = step_;
  double rate = hot_.rate_hz;
  while (step_ < config_.steps && !halted_) {
    apply_control(channel_.drain());
    if (halted_) break;
    if (paused_) {
      channel_.wait_until(Clock::now() + std::chrono::milliseconds(50));
      if (config_.expert == ExpertMode::kHuman) {
        StepRecord scratch;
        resolve_human_queries(scratch);
        if (!records_.empty()) {
          records_.back().labels_added += scratch.labels_added;
          records_.back().labeled_size = buffers_.labeled().size();
        }
      }
      anchor = Clock::now();
      anchor_step = step_;
      continue;
    }
    if (hot_.rate_hz != rate) {
      rate = hot_.rate_hz;
      anchor = Clock::now();
      anchor_step = step_;
    }
    step();
    if (config_.paced) {
      const auto deadline =
          anchor + std::chrono::duration_cast<Clock::duration>(
                       std::chrono::duration<double>(static_cast<double>(step_ - anchor_step) / rate));
      // Control messages wake the wait and are applied between steps.
      while (Clock::now() < deadline && !halted_) {
        channel_.wait_until(deadline);
        apply_control(channel_.drain());
      }
    }
  }
  // Queries still outstanding when the stream ends get the fallback label.
  if (!pending_.empty() && !records_.empty()) {
    for (auto& [id, q] : pending_) {
      add_label(q.item, q.item.transition.action, q.u, "fallback", records_.back());
      write_audit({{"event", "query_unanswered_at_end"}, {"query_id", id}, {"provenance", "fallback"}});
      closed_queries_[id] = "fallback";
    }
    pending_.clear();
    records_.back().labeled_size = buffers_.labeled().size();
  }
  wall_s_ = std::chrono::duration<double>(Clock::now() - start).count();
  if (halted_ && !config_.checkpoint_dir.empty()) save_checkpoint(config_.checkpoint_dir);
  publish_snapshot();
  events_.publish({{"event", "end"}, {"halted", halted_}, {"steps", step_}});
  return metrics();
}

// ---------------------------------------------------------------- snapshots

void StreamLoop::publish_snapshot() {
  const OnlineMetrics m = online_metrics(records_, initial_labeled_, wall_s_);
  nlohmann::json snap = {{"step", step_},
                         {"paused", paused_},
                         {"halted", halted_},
                         {"mode", mode_ == LoopMode::kEnsemble ? "ensemble" : "single-head"},
                         {"hot_params", hot_.to_json()},
                         {"labeled_size", buffers_.labeled().size()},
                         {"weak_size", buffers_.weak().size()},
                         {"pool_size", pool_.size()},
                         {"pending_queries", pending_.size()},
                         {"blocks", blocks_},
                         {"gradient_steps", gradient_steps_},
                         {"focused_pending", focused_pending_},
                         {"focused_done", focused_done_},
                         {"metrics", m.to_json(true)}};
  if (!records_.empty()) snap["last"] = records_.back().to_json();
  nlohmann::json pend = nlohmann::json::array();
  for (const auto& [id, q] : pending_) pend.push_back(q.to_json());
  auto sp = std::make_shared<const nlohmann::json>(std::move(snap));
  auto pp = std::make_shared<const nlohmann::json>(std::move(pend));
  std::lock_guard<std::mutex> lock(snap_mu_);
  snapshot_ = std::move(sp);
  pending_snapshot_ = std::move(pp);
}

nlohmann::json StreamLoop::snapshot() const {
  std::lock_guard<std::mutex> lock(snap_mu_);
  return snapshot_ ? *snapshot_ : nlohmann::json::object();
}

nlohmann::json StreamLoop::pending_queries() const {
  std::lock_guard<std::mutex> lock(snap_mu_);
  return pending_snapshot_ ? *pending_snapshot_ : nlohmann::json::array();
}

OnlineMetrics StreamLoop::metrics() const { return online_metrics(records_, initial_labeled_, wall_s_); }

void StreamLoop::save_checkpoint(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  models_.twin.save(dir / "twin");
  models_.outcome.save(dir / "outcome");
  std::vector<policy::QNetwork> heads;
  for (const auto& h : models_.heads) heads.push_back(h.clone());
  if (heads.size() == policy::kQEnsembleSize) {
    policy::QEnsemble(std::move(heads)).save(dir / "q_ensemble");
  } else {
    std::filesystem::create_directories(dir / "q_heads");
    for (std::size_t k = 0; k < models_.heads.size(); ++k)
      nn::save_params(dir / "q_heads" / ("head_" + std::to_string(k) + ".tbnn"), models_.heads[k].params());
  }
  nn::save_params(dir / "behavior.tbnn", models_.behavior.params());
  write_json(dir / "state.json", {{"step", step_},
                                  {"hot_params", hot_.to_json()},
                                  {"metrics", metrics().to_json(true)},
                                  {"labeled_size", buffers_.labeled().size()},
                                  {"weak_size", buffers_.weak().size()},
                                  {"frozen_checksums", frozen_checksums()}});
  write_jsonl(dir / "audit.jsonl", audit_);
}

}  // namespace twinbench::online
