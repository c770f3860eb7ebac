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

#include "twinbench/outcome/outcome.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "twinbench/common/io.hpp"
#include "twinbench/eval/metrics.hpp"
#include "twinbench/nn/checkpoint.hpp"
#include "twinbench/nn/optim.hpp"

namespace twinbench::outcome {

namespace {

nn::Tensor states_tensor(const std::vector<State>& states) {
  nn::Tensor t({states.size(), kStateDim});
  for (std::size_t i = 0; i < states.size(); ++i) std::copy(states[i].begin(), states[i].end(), t.ptr() + i * kStateDim);
  return t;
}

}  // namespace

RewardNormStats RewardNormStats::fit(const std::vector<Transition>& train, const std::string& fingerprint) {
  if (train.size() < 2) throw std::invalid_argument("RewardNormStats: need at least two rewards");
  double mean = 0.0;
  for (const auto& t : train) mean += t.reward;
  mean /= static_cast<double>(train.size());
  double var = 0.0;
  for (const auto& t : train) var += (t.reward - mean) * (t.reward - mean);
  var /= static_cast<double>(train.size());
  if (!(var > 0.0)) throw std::invalid_argument("RewardNormStats: rewards have zero variance");
  return {mean, std::sqrt(var), fingerprint};
}

double RewardNormStats::normalize(double r) const {
  if (!(stddev > 0.0)) throw std::logic_error("RewardNormStats: statistics not loaded");
  return (r - mean) / stddev;
}

double RewardNormStats::denormalize(double z) const { return z * stddev + mean; }

nlohmann::json RewardNormStats::to_json() const {
  return {{"mean", mean}, {"stddev", stddev}, {"split_fingerprint", split_fingerprint}};
}

RewardNormStats RewardNormStats::from_json(const nlohmann::json& j) {
  RewardNormStats s{j.at("mean").get<double>(), j.at("stddev").get<double>(), j.at("split_fingerprint").get<std::string>()};
  if (!(s.stddev > 0.0)) throw std::invalid_argument("RewardNormStats: stddev must be positive");
  return s;
}

void RewardNormStats::save(const std::filesystem::path& path) const { write_json(path, to_json()); }

RewardNormStats RewardNormStats::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("reward statistics missing: " + path.string());
  return from_json(read_json(path));
}

std::string split_fingerprint(const std::vector<int>& ids) {
  std::string s;
  for (int i : ids) s += std::to_string(i) + ",";
  return sha256_hex(s).substr(0, 16);
}

nlohmann::json OutcomeConfig::to_json() const {
  return {{"hidden", hidden}, {"z_dim", z_dim}, {"action_dim", action_dim}, {"disc_hidden", disc_hidden}};
}

OutcomeConfig OutcomeConfig::from_json(const nlohmann::json& j) {
  OutcomeConfig c;
  c.hidden = j.at("hidden");
  c.z_dim = j.at("z_dim");
  c.action_dim = j.at("action_dim");
  c.disc_hidden = j.at("disc_hidden");
  return c;
}

OutcomeModel::OutcomeModel(const OutcomeConfig& config, std::uint64_t seed, RewardNormStats stats, double lambda)
    : config_(config), stats_(std::move(stats)), lambda_(lambda) {
  if (lambda < 0.0) throw std::invalid_argument("OutcomeModel: lambda must be >= 0");
  nn::Rng rng(seed);
  enc1_ = nn::Dense(kStateDim, config.hidden, rng);
  enc2_ = nn::Dense(config.hidden, config.z_dim, rng);
  action_emb_ = nn::Embedding(kNumActions, config.action_dim, rng);
  head1_ = nn::Dense(config.z_dim + config.action_dim, config.hidden, rng);
  head2_ = nn::Dense(config.hidden, 1, rng);
  disc1_ = nn::Dense(config.z_dim, config.disc_hidden, rng);
  disc2_ = nn::Dense(config.disc_hidden, kNumActions, rng);
}

void OutcomeModel::set_lambda(double l) {
  if (l < 0.0) throw std::invalid_argument("OutcomeModel: lambda must be >= 0");
  lambda_ = l;
}

nn::Var OutcomeModel::encode(const nn::Tensor& states) const {
  return nn::tanh(enc2_.forward(nn::relu(enc1_.forward(nn::constant(states)))));
}

nn::Var OutcomeModel::predict_normalized(const nn::Var& z, std::span<const int> actions) const {
  nn::Var h = nn::concat_cols(z, action_emb_.forward(actions));
  return head2_.forward(nn::relu(head1_.forward(h)));
}

nn::Var OutcomeModel::discriminator_logits(const nn::Var& z) const {
  return disc2_.forward(nn::relu(disc1_.forward(z)));
}

std::vector<double> OutcomeModel::predict_batch(const std::vector<State>& states, const std::vector<int>& actions) const {
  if (states.size() != actions.size()) throw std::invalid_argument("OutcomeModel: misaligned batch");
  if (states.empty()) return {};
  nn::NoGradGuard guard;
  const nn::Tensor out = predict_normalized(encode(states_tensor(states)), actions).value();
  std::vector<double> r(states.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = stats_.denormalize(out[i]);
  return r;
}

double OutcomeModel::predict(const State& s, int action) const { return predict_batch({s}, {action}).front(); }

std::vector<ActionValues> OutcomeModel::predict_all(const std::vector<State>& states) const {
  std::vector<State> rep;
  std::vector<int> acts;
  rep.reserve(states.size() * kNumActions);
  for (const auto& s : states) {
    for (int a = 0; a < static_cast<int>(kNumActions); ++a) {
      rep.push_back(s);
      acts.push_back(a);
    }
  }
  const std::vector<double> r = predict_batch(rep, acts);
  std::vector<ActionValues> out(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    for (std::size_t a = 0; a < kNumActions; ++a) out[i][a] = r[i * kNumActions + a];
  }
  return out;
}

std::vector<std::vector<double>> OutcomeModel::embed(const std::vector<State>& states) const {
  nn::NoGradGuard guard;
  const nn::Tensor z = encode(states_tensor(states)).value();
  std::vector<std::vector<double>> out(states.size(), std::vector<double>(config_.z_dim));
  for (std::size_t i = 0; i < states.size(); ++i) std::copy_n(z.ptr() + i * config_.z_dim, config_.z_dim, out[i].data());
  return out;
}

double OutcomeModel::treatment_effect(const State& s, int action) const {
  if (!valid_action(action)) throw std::invalid_argument("treatment_effect: invalid action");
  if (action == kConservativeAction) return 0.0;
  const std::vector<double> r = predict_batch({s, s}, {action, kConservativeAction});
  return r[0] - r[1];
}

nn::ParamList OutcomeModel::encoder_params() const {
  nn::ParamList ps;
  enc1_.collect("enc1", ps);
  enc2_.collect("enc2", ps);
  return ps;
}

nn::ParamList OutcomeModel::model_params() const {
  nn::ParamList ps = encoder_params();
  action_emb_.collect("action_emb", ps);
  head1_.collect("head1", ps);
  head2_.collect("head2", ps);
  return ps;
}

nn::ParamList OutcomeModel::discriminator_params() const {
  nn::ParamList ps;
  disc1_.collect("disc1", ps);
  disc2_.collect("disc2", ps);
  return ps;
}

nn::ParamList OutcomeModel::online_params() const {
  nn::ParamList ps;
  head1_.collect("head1", ps);
  head2_.collect("head2", ps);
  disc1_.collect("disc1", ps);
  disc2_.collect("disc2", ps);
  return ps;
}

nn::ParamList OutcomeModel::params() const {
  nn::ParamList ps = model_params();
  nn::ParamList d = discriminator_params();
  ps.insert(ps.end(), d.begin(), d.end());
  return ps;
}

void OutcomeModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nn::save_params(dir / "outcome.tbnn", params());
  stats_.save(dir / "reward_stats.json");
  write_json(dir / "manifest.json", {{"config", config_.to_json()}, {"lambda", lambda_}, {"checkpoint", "outcome.tbnn"}});
}

OutcomeModel OutcomeModel::load(const std::filesystem::path& dir) {
  const nlohmann::json m = read_json(dir / "manifest.json");
  OutcomeModel model(OutcomeConfig::from_json(m.at("config")), 0, RewardNormStats::load(dir / "reward_stats.json"),
                     m.at("lambda").get<double>());
  nn::load_params(dir / m.at("checkpoint").get<std::string>(), model.params());
  return model;
}

OutcomeModel OutcomeModel::clone() const {
  OutcomeModel m(config_, 0, stats_, lambda_);
  nn::copy_values(params(), m.params());
  return m;
}

double mean_absolute_error(const OutcomeModel& model, const std::vector<Transition>& rows) {
  if (rows.empty()) throw std::invalid_argument("mean_absolute_error: no rows");
  std::vector<State> s;
  std::vector<int> a;
  for (const auto& t : rows) {
    s.push_back(t.state);
    a.push_back(t.action);
  }
  const std::vector<double> p = model.predict_batch(s, a);
  double e = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) e += std::abs(p[i] - rows[i].reward);
  return e / static_cast<double>(rows.size());
}

OutcomeEvaluation evaluate_outcome(const OutcomeModel& model, const std::vector<Transition>& rows, int bins) {
  if (rows.empty()) throw std::invalid_argument("evaluate_outcome: no rows");
  std::vector<State> s;
  std::vector<int> a;
  std::vector<double> y;
  for (const auto& t : rows) {
    s.push_back(t.state);
    a.push_back(t.action);
    y.push_back(t.reward);
  }
  const std::vector<double> p = model.predict_batch(s, a);
  OutcomeEvaluation ev;
  ev.r2 = eval::r_squared(p, y);
  ev.mse = eval::mse(p, y);
  ev.mae = eval::mae(p, y);
  const eval::Calibration cal = eval::calibration(p, y, bins);
  ev.ece = cal.ece;
  ev.mce = cal.mce;
  for (std::size_t k = 0; k < kNumActions; ++k) {
    std::vector<double> pk, yk;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (a[i] == static_cast<int>(k)) {
        pk.push_back(p[i]);
        yk.push_back(y[i]);
      }
    }
    ev.per_action_r2[k] = pk.size() >= 2 ? eval::r_squared(pk, yk) : std::numeric_limits<double>::quiet_NaN();
  }
  return ev;
}

OutcomeModel train_outcome(const std::vector<Transition>& train, const std::vector<Transition>& validation,
                           const RewardNormStats& stats, double lambda, std::uint64_t seed,
                           const OutcomeTrainConfig& config, OutcomeTrainResult* result) {
  if (lambda < 0.0 || (lambda == 0.0 && !config.allow_zero_lambda)) {
    throw std::invalid_argument("train_outcome: lambda must be > 0");
  }
  if (train.empty() || validation.empty()) throw std::invalid_argument("train_outcome: empty split");
  OutcomeModel model(config.model, seed, stats, lambda);
  nn::ParamList mp = model.model_params();
  nn::ParamList dp = model.discriminator_params();
  nn::AdamWConfig oc;
  oc.learning_rate = config.learning_rate;
  nn::AdamW opt_model(mp, oc);
  nn::AdamW opt_disc(dp, oc);
  nn::Rng rng(seed ^ 0x0c7u);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  OutcomeTrainResult res;
  res.lambda = lambda;
  res.best_validation_mae = std::numeric_limits<double>::infinity();
  std::vector<nn::Tensor> best = nn::snapshot_values(model.params());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); i += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - i);
      nn::Tensor s({n, kStateDim});
      nn::Tensor y({n, 1});
      std::vector<int> a(n);
      for (std::size_t j = 0; j < n; ++j) {
        const Transition& t = train[order[i + j]];
        std::copy(t.state.begin(), t.state.end(), s.ptr() + j * kStateDim);
        a[j] = t.action;
        y[j] = stats.normalize(t.reward);
      }
      // Discriminator ascent on action-from-z cross-entropy (i.e. descends its CE loss).
      {
        nn::Var z = nn::detach(model.encode(s));
        nn::Var dl = nn::cross_entropy(model.discriminator_logits(z), a);
        if (!std::isfinite(dl.item())) throw nn::NumericalError("train_outcome: discriminator loss is not finite");
        dl.backward();
        opt_disc.step();
      }
      // Outcome model: L1 fit plus confusion of the discriminator.
      nn::Var z = model.encode(s);
      nn::Var loss = nn::l1_loss(model.predict_normalized(z, a), y);
      if (lambda > 0.0) {
        loss = nn::sub(loss, nn::scale(nn::softmax_entropy(model.discriminator_logits(z)), lambda));
      }
      if (!std::isfinite(loss.item())) throw nn::NumericalError("train_outcome: outcome loss is not finite");
      loss.backward();
      opt_model.step();
      nn::zero_grads(dp);
    }
    const double mae = mean_absolute_error(model, validation);
    res.validation_mae.push_back(mae);
    if (mae < res.best_validation_mae) {
      res.best_validation_mae = mae;
      res.best_epoch = epoch;
      best = nn::snapshot_values(model.params());
    }
  }
  nn::restore_values(model.params(), best);
  if (result) *result = res;
  return model;
}

OutcomeModel select_outcome(const std::vector<Transition>& train, const std::vector<Transition>& validation,
                            const RewardNormStats& stats, const std::vector<double>& grid, std::uint64_t seed,
                            const OutcomeTrainConfig& config, std::vector<OutcomeTrainResult>* results) {
  if (grid.empty()) throw std::invalid_argument("select_outcome: empty lambda grid");
  if (results) results->clear();
  OutcomeModel best;
  double best_mae = std::numeric_limits<double>::infinity();
  for (double lambda : grid) {
    OutcomeTrainResult r;
    OutcomeModel m = train_outcome(train, validation, stats, lambda, seed, config, &r);
    if (results) results->push_back(r);
    if (r.best_validation_mae < best_mae) {
      best_mae = r.best_validation_mae;
      best = std::move(m);
    }
  }
  return best;
}

double probe_accuracy(const std::vector<std::vector<double>>& train_x, const std::vector<int>& train_y,
                      const std::vector<std::vector<double>>& test_x, const std::vector<int>& test_y,
                      std::uint64_t seed, std::size_t epochs) {
  if (train_x.empty() || test_x.empty() || train_x.size() != train_y.size() || test_x.size() != test_y.size()) {
    throw std::invalid_argument("probe_accuracy: bad inputs");
  }
  const std::size_t d = train_x.front().size();
  nn::Rng rng(seed);
  nn::Dense l1(d, 32, rng), l2(32, kNumActions, rng);
  nn::ParamList ps;
  l1.collect("l1", ps);
  l2.collect("l2", ps);
  nn::AdamWConfig cfg;
  cfg.learning_rate = 3e-3;
  nn::AdamW opt(ps, cfg);
  auto to_tensor = [d](const std::vector<std::vector<double>>& x, std::size_t from, std::size_t n) {
    nn::Tensor t({n, d});
    for (std::size_t i = 0; i < n; ++i) std::copy_n(x[from + i].data(), d, t.ptr() + i * d);
    return t;
  };
  std::vector<std::size_t> order(train_x.size());
  std::iota(order.begin(), order.end(), 0);
  constexpr std::size_t kBatch = 256;
  for (std::size_t e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); i += kBatch) {
      const std::size_t n = std::min(kBatch, order.size() - i);
      nn::Tensor x({n, d});
      std::vector<int> y(n);
      for (std::size_t j = 0; j < n; ++j) {
        std::copy_n(train_x[order[i + j]].data(), d, x.ptr() + j * d);
        y[j] = train_y[order[i + j]];
      }
      nn::cross_entropy(l2.forward(nn::relu(l1.forward(nn::constant(x)))), y).backward();
      opt.step();
    }
  }
  nn::NoGradGuard guard;
  const nn::Tensor logits = l2.forward(nn::relu(l1.forward(nn::constant(to_tensor(test_x, 0, test_x.size()))))).value();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_x.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < kNumActions; ++a) {
      if (logits.at(i, a) > logits.at(i, best)) best = a;
    }
    if (static_cast<int>(best) == test_y[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test_x.size());
}

}  // namespace twinbench::outcome
