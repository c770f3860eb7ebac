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

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "twinbench/nn/optim.hpp"
#include "twinbench/online/ema.hpp"
#include "twinbench/online/hot_params.hpp"
#include "twinbench/online/replay.hpp"
#include "twinbench/online/safety.hpp"
#include "twinbench/online/uncertainty.hpp"
#include "twinbench/outcome/outcome.hpp"
#include "twinbench/policy/qnet.hpp"
#include "twinbench/twin/dynamics.hpp"

namespace twinbench::online {

// age <- clip(age + offset, 0, 1); every other component untouched.
State drift_inject(const State& s, double offset = 0.3);

struct StreamItem {
  std::int64_t index = 0;
  Transition transition;
  std::vector<State> history_states;  // preceding tokens of the same patient, oldest first
  std::vector<int> history_actions;
  bool drifted = false;
};

// Incoming transitions: first the replay pool in order, then, from `drift_at` on,
// freshly generated patients whose initial age is shifted by `drift_offset`.
// Generated patients follow the behavior policy, so the sequence does not depend
// on what the loop emits.
class StreamSource {
 public:
  StreamSource(std::vector<Transition> replay_pool, std::int64_t drift_at, double drift_offset, std::uint64_t seed,
               std::size_t context = 8);

  StreamItem next();
  std::int64_t produced() const { return produced_; }

 private:
  void start_generated_patient();

  std::vector<Transition> pool_;
  std::int64_t drift_at_;
  double drift_offset_;
  std::uint64_t seed_;
  std::size_t context_;
  std::int64_t produced_ = 0;
  std::size_t pool_pos_ = 0;
  // Generated-patient state.
  int gen_patient_ = 0;
  int gen_t_ = 0;
  State gen_state_{};
  Rng gen_rng_;
  bool gen_active_ = false;
  int last_patient_ = -1;
  std::deque<State> hist_states_;
  std::deque<int> hist_actions_;
};

enum class ExpertMode { kSimulated, kHuman };

struct PendingQuery {
  std::int64_t id = 0;
  std::int64_t origin_step = 0;
  State state{};
  int proposed_action = 0;
  double u = 0.0;
  std::chrono::steady_clock::time_point deadline;
  StreamItem item;

  nlohmann::json to_json() const;
};

struct ControlMessage {
  std::uint64_t seq = 0;
  std::string kind;  // set_param | answer_query | pause | resume | snapshot | halt | report
  nlohmann::json payload;
  std::shared_ptr<std::promise<nlohmann::json>> reply;
};

// Ordered, non-blocking intake of control messages; drained by the loop at step boundaries.
class ControlChannel {
 public:
  std::future<nlohmann::json> submit(const std::string& kind, nlohmann::json payload = nlohmann::json::object());
  std::vector<ControlMessage> drain();
  // Waits until a message arrives or the deadline passes.
  void wait_until(std::chrono::steady_clock::time_point deadline);

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<ControlMessage> queue_;
  std::uint64_t next_seq_ = 1;
};

// Ordered per-step event feed for push subscribers.
class EventBus {
 public:
  explicit EventBus(std::size_t capacity = 4096) : capacity_(capacity) {}
  void publish(nlohmann::json event);
  // Events with sequence number > after; waits up to `timeout` when none are available.
  std::vector<std::pair<std::uint64_t, nlohmann::json>> since(std::uint64_t after, std::chrono::milliseconds timeout);
  void close();
  bool closed() const { return closed_; }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::pair<std::uint64_t, nlohmann::json>> events_;
  std::uint64_t next_ = 1;
  std::size_t capacity_;
  std::atomic<bool> closed_{false};
};

enum class LoopMode { kEnsemble, kSingleHead };

struct StreamConfig {
  std::int64_t steps = 2000;
  std::int64_t drift_at = 1000;
  double drift_offset = 0.3;
  HotParams hot;
  std::size_t k = 20;              // query batch size
  std::size_t update_every = 20;   // new labels per fitting block
  std::size_t block_steps = 20;    // gradient steps per fitting block
  std::int64_t pool_staleness = 500;
  std::size_t focused_chunk = 25;  // tier-2 focused steps run per stream step
  std::size_t initial_labeled = 20;
  std::size_t context = 8;
  double q_regularization = 0.01;
  double tau_supp = 0.1;           // behavior-support threshold of the TD candidate set
  double learning_rate = 3e-4;
  ExpertMode expert = ExpertMode::kSimulated;
  double human_timeout_s = 30.0;
  bool paced = true;
  std::uint64_t seed = 0;
  std::filesystem::path log_path;        // per-step JSON Lines; empty disables
  std::filesystem::path audit_path;      // control and fallback audit; empty keeps it in memory only
  std::filesystem::path checkpoint_dir;  // written on halt; empty disables
};

struct OnlineModels {
  twin::TwinEnsemble twin;
  outcome::OutcomeModel outcome;
  std::vector<policy::QNetwork> heads;  // five for the ensemble loop, one for the single-head baseline
  policy::BehaviorModel behavior;
};

struct StepRecord {
  std::int64_t step = 0;
  double timestamp = 0.0;
  std::string state_hash;
  int proposed = 0;
  int emitted = 0;
  double u = 0.0;
  SafetyVerdict verdict;
  bool safe = true;
  bool admitted = false;
  std::size_t queries_issued = 0;
  std::size_t labels_added = 0;
  std::size_t labeled_size = 0;
  std::size_t weak_size = 0;
  std::size_t pool_size = 0;
  std::size_t blocks_run = 0;
  std::size_t focused_run = 0;
  double latency_s = 0.0;

  nlohmann::json to_json() const;
};

// Aggregates in the shape of the online results table.
struct OnlineMetrics {
  std::int64_t steps = 0;
  double query_rate = 0.0;
  double mean_response_s = 0.0;
  double throughput_hz = 0.0;
  double safety_rate = 0.0;
  std::size_t updates = 0;
  std::size_t initial_buffer = 0;
  std::size_t final_buffer = 0;
  std::size_t labels_added = 0;
  std::size_t batch_query_total = 0;
  std::size_t forced_queries = 0;
  double wall_s = 0.0;

  nlohmann::json to_json(bool include_timing = true) const;
};

class StreamLoop {
 public:
  StreamLoop(OnlineModels models, StreamConfig config, LoopMode mode, std::vector<Transition> replay_pool,
             std::vector<Transition> initial_labeled);
  ~StreamLoop();
  StreamLoop(const StreamLoop&) = delete;
  StreamLoop& operator=(const StreamLoop&) = delete;

  // Runs until `steps` or a halt message; returns the final metrics.
  OnlineMetrics run();
  // One pipeline step (no pacing); exposed for tests.
  StepRecord step();
  // Applies queued control messages; also usable after run() has returned.
  void process_control();

  ControlChannel& channel() { return channel_; }
  EventBus& events() { return events_; }

  // Thread-safe copies for readers.
  nlohmann::json snapshot() const;
  nlohmann::json pending_queries() const;
  OnlineMetrics metrics() const;

  const std::vector<StepRecord>& records() const { return records_; }
  const ReplayBuffers& buffers() const { return buffers_; }
  const HotParams& hot() const { return hot_; }
  const OnlineModels& models() const { return models_; }
  const std::vector<nlohmann::json>& audit() const { return audit_; }
  std::int64_t current_step() const { return step_; }
  std::size_t focused_pending() const { return focused_pending_; }
  std::size_t focused_done() const { return focused_done_; }
  std::size_t retarget_steps() const { return retarget_steps_; }
  std::size_t gradient_steps() const { return gradient_steps_; }
  bool halted() const { return halted_; }

  // FNV checksums of parameters the online stage must never touch.
  std::vector<std::uint64_t> frozen_checksums() const;
  void save_checkpoint(const std::filesystem::path& dir) const;

 private:
  struct UpdateState;

  void apply_control(std::vector<ControlMessage> messages);
  nlohmann::json handle(const ControlMessage& m);
  void admit(const StreamItem& item, double u, int proposed);
  void issue_queries(StepRecord& rec);
  void resolve_human_queries(StepRecord& rec);
  void add_label(const StreamItem& item, int action, double weight, const std::string& provenance, StepRecord& rec);
  void run_block();
  void gradient_step(bool focused);
  void update_heads(const std::vector<ReplayItem>& batch);
  void update_dynamics(const std::vector<ReplayItem>& batch);
  void update_outcome(const std::vector<ReplayItem>& batch);
  void publish_snapshot();
  void write_audit(nlohmann::json entry);

  OnlineModels models_;
  StreamConfig config_;
  LoopMode mode_;
  HotParams hot_;
  StreamSource source_;
  ReplayBuffers buffers_;
  StateNovelty novelty_;
  ControlChannel channel_;
  EventBus events_;
  Rng rng_;

  std::unique_ptr<UpdateState> upd_;

  struct PoolEntry {
    StreamItem item;
    double u = 0.0;
    int proposed = 0;
    std::int64_t admitted_at = 0;
  };
  std::vector<PoolEntry> pool_;
  std::map<std::int64_t, PendingQuery> pending_;
  std::map<std::int64_t, std::string> closed_queries_;  // id -> provenance of the stored label
  std::map<int, State> last_state_;                     // latest stream state per patient
  std::int64_t next_query_id_ = 1;

  std::vector<StepRecord> records_;
  std::vector<nlohmann::json> audit_;
  std::ofstream log_;
  std::int64_t step_ = 0;
  std::size_t initial_labeled_ = 0;
  std::size_t labels_added_ = 0;
  std::size_t labels_since_block_ = 0;
  std::size_t batch_query_total_ = 0;
  std::size_t forced_queries_ = 0;
  std::size_t blocks_ = 0;
  std::size_t focused_pending_ = 0;
  std::size_t focused_done_ = 0;
  std::size_t retarget_steps_ = 0;
  std::size_t gradient_steps_ = 0;
  std::size_t skipped_steps_ = 0;
  bool retarget_ = false;
  bool focused_outcome_ = false;
  bool paused_ = false;
  bool halted_ = false;
  double wall_s_ = 0.0;

  mutable std::mutex snap_mu_;
  std::shared_ptr<const nlohmann::json> snapshot_;
  std::shared_ptr<const nlohmann::json> pending_snapshot_;
};

OnlineMetrics online_metrics(const std::vector<StepRecord>& records, std::size_t initial_buffer, double wall_s);

}  // namespace twinbench::online
