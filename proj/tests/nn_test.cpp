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
#include <cstring>
#include <filesystem>
#include <random>

#include "twinbench/nn/checkpoint.hpp"
#include "twinbench/nn/gradcheck.hpp"
#include "twinbench/nn/layers.hpp"
#include "twinbench/nn/ops.hpp"
#include "twinbench/nn/optim.hpp"

namespace tn = twinbench::nn;
using tn::Tensor;
using tn::Var;

namespace {

Tensor random_tensor(tn::Shape shape, tn::Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = n(rng);
  return t;
}

// Projects an output onto fixed random weights so every output coordinate contributes.
Var project(const Var& y, const Tensor& w) { return tn::sum(tn::mul(y, tn::constant(w))); }

}  // namespace

TEST(SmoothL1, IdentityIsZero) {
  Tensor p({2, 3}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  std::vector<std::uint8_t> mask{1, 0};
  EXPECT_EQ(tn::smooth_l1_masked(Var(p), p, mask).item(), 0.0);
}

TEST(SmoothL1, HalfUnitError) {
  Tensor p({1, 1}, {0.5});
  Tensor t({1, 1}, {0.0});
  std::vector<std::uint8_t> mask{1};
  EXPECT_DOUBLE_EQ(tn::smooth_l1_masked(Var(p), t, mask).item(), 0.125);
}

TEST(SmoothL1, PaddingIgnored) {
  Tensor p({2, 1}, {0.5, 99.0});
  Tensor t({2, 1}, {0.5, 0.0});
  std::vector<std::uint8_t> mask{1, 0};
  EXPECT_EQ(tn::smooth_l1_masked(Var(p), t, mask).item(), 0.0);
}

TEST(SmoothL1, LinearBranchAndErrors) {
  Tensor p({1, 2}, {3.0, -0.5});
  Tensor t({1, 2}, {0.0, 0.0});
  std::vector<std::uint8_t> mask{1};
  EXPECT_DOUBLE_EQ(tn::smooth_l1_masked(Var(p), t, mask).item(), (2.5 + 0.125) / 2.0);
  std::vector<std::uint8_t> none{0};
  EXPECT_THROW(tn::smooth_l1_masked(Var(p), t, none), std::invalid_argument);
  EXPECT_THROW(tn::smooth_l1_masked(Var(p), Tensor({1, 3}), mask), std::invalid_argument);
}

TEST(SmoothL1, NonNegativeOnRandomInputs) {
  tn::Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    Tensor p = random_tensor({4, 3}, rng), t = random_tensor({4, 3}, rng);
    std::vector<std::uint8_t> mask{1, 1, 0, 1};
    EXPECT_GT(tn::smooth_l1_masked(Var(p), t, mask).item(), 0.0);
  }
}

TEST(GradCheck, SumIsExact) {
  tn::Rng rng(1);
  const double err = tn::grad_check([](const Var& x) { return tn::sum(x); }, random_tensor({3, 4}, rng));
  EXPECT_LT(err, 1e-10);
}

TEST(GradCheck, TanhAtZero) {
  Var x(Tensor({5}), true);
  tn::sum(tn::tanh(x)).backward();
  for (double g : x.grad().data()) EXPECT_DOUBLE_EQ(g, 1.0);
  EXPECT_LT(tn::grad_check([](const Var& v) { return tn::sum(tn::tanh(v)); }, Tensor({5})), 1e-8);
}

TEST(GradCheck, NonFiniteIsReported) {
  EXPECT_THROW(tn::grad_check([](const Var& v) { return tn::scale(tn::sum(v), std::nan("")); }, Tensor({2})),
               tn::NumericalError);
}

TEST(GradCheck, TwoLayerDenseNet) {
  tn::Rng rng(7);
  tn::Dense l1(6, 8, rng), l2(8, 3, rng);
  const Tensor w = random_tensor({4, 3}, rng);
  auto f = [&](const Var& x) { return project(l2.forward(tn::tanh(l1.forward(x))), w); };
  EXPECT_LT(tn::grad_check(f, random_tensor({4, 6}, rng)), 1e-4);
  tn::ParamList params;
  l1.collect("l1", params);
  l2.collect("l2", params);
  const Tensor x = random_tensor({4, 6}, rng);
  for (auto& p : params) {
    EXPECT_LT(tn::grad_check_leaf([&] { return f(Var(x)); }, p.var), 1e-4) << p.name;
  }
}

class LayerGradCheck : public ::testing::TestWithParam<int> {};

TEST_P(LayerGradCheck, AllLayersAtRandomPoint) {
  tn::Rng rng(100 + GetParam());
  const std::size_t batch = 2, time = 3, width = 8, heads = 2;
  const std::size_t rows = batch * time;

  auto check = [&](const char* label, const std::function<Var(const Var&)>& f, const Tensor& x,
                   const tn::ParamList& params) {
    EXPECT_LT(tn::grad_check(f, x), 1e-4) << label << " input";
    for (const auto& p : params) {
      Var leaf = p.var;
      EXPECT_LT(tn::grad_check_leaf([&] { return f(Var(x)); }, leaf), 1e-4) << label << " " << p.name;
    }
  };

  {
    tn::Dense d(width, 5, rng);
    tn::ParamList ps;
    d.collect("dense", ps);
    const Tensor w = random_tensor({rows, 5}, rng);
    check("dense", [&](const Var& x) { return project(d.forward(x), w); }, random_tensor({rows, width}, rng), ps);
  }
  {
    tn::Embedding e(5, width, rng);
    tn::ParamList ps;
    e.collect("embedding", ps);
    std::vector<int> idx{0, 3, 3, 4, 1, 0};
    const Tensor w = random_tensor({rows, width}, rng);
    for (const auto& p : ps) {
      EXPECT_LT(tn::grad_check_leaf([&] { return project(e.forward(idx), w); }, p.var), 1e-4) << p.name;
    }
  }
  {
    tn::LayerNorm ln(width);
    for (double& v : ln.gain.mutable_value().data()) v += 0.3;
    tn::ParamList ps;
    ln.collect("norm", ps);
    const Tensor w = random_tensor({rows, width}, rng);
    check("layer_norm", [&](const Var& x) { return project(ln.forward(x), w); }, random_tensor({rows, width}, rng),
          ps);
  }
  {
    tn::CausalSelfAttention a(width, heads, rng);
    tn::ParamList ps;
    a.collect("attn", ps);
    const Tensor w = random_tensor({rows, width}, rng);
    check("attention", [&](const Var& x) { return project(a.forward(x, batch, time), w); },
          random_tensor({rows, width}, rng), ps);
  }
  {
    tn::FeedForward ff(width, 12, rng);
    tn::ParamList ps;
    ff.collect("ff", ps);
    const Tensor w = random_tensor({rows, width}, rng);
    check("feed_forward", [&](const Var& x) { return project(ff.forward(x), w); }, random_tensor({rows, width}, rng),
          ps);
  }
  {
    tn::EncoderLayer layer(width, heads, 12, rng);
    tn::ParamList ps;
    layer.collect("enc", ps);
    const Tensor w = random_tensor({rows, width}, rng);
    check("encoder", [&](const Var& x) { return project(layer.forward(x, batch, time), w); },
          random_tensor({rows, width}, rng), ps);
  }
  {
    tn::DuelingHead head(width, 5, rng);
    tn::ParamList ps;
    head.collect("dueling", ps);
    const Tensor w = random_tensor({rows, 5}, rng);
    check("dueling", [&](const Var& x) { return project(head.forward(x), w); }, random_tensor({rows, width}, rng),
          ps);
  }
}

INSTANTIATE_TEST_SUITE_P(TenPoints, LayerGradCheck, ::testing::Range(0, 10));

TEST(GradCheck, LossesAndActivations) {
  tn::Rng rng(11);
  const Tensor target = random_tensor({4, 5}, rng);
  const Tensor w = random_tensor({4, 5}, rng);
  std::vector<std::uint8_t> mask{1, 1, 0, 1};
  std::vector<int> labels{0, 4, 2, 1};
  const Tensor x = random_tensor({4, 5}, rng);
  EXPECT_LT(tn::grad_check([&](const Var& v) { return tn::smooth_l1_masked(v, target, mask); }, x), 1e-4);
  EXPECT_LT(tn::grad_check([&](const Var& v) { return tn::mse_loss(v, target); }, x), 1e-4);
  EXPECT_LT(tn::grad_check([&](const Var& v) { return tn::cross_entropy(v, labels); }, x), 1e-4);
  EXPECT_LT(tn::grad_check([&](const Var& v) { return tn::softmax_entropy(v); }, x), 1e-4);
  EXPECT_LT(tn::grad_check([&](const Var& v) { return project(tn::softmax_rows(v), w); }, x), 1e-4);
  EXPECT_LT(tn::grad_check([&](const Var& v) { return tn::sum(tn::logsumexp_rows(v)); }, x), 1e-4);
  EXPECT_LT(tn::grad_check([&](const Var& v) { return project(tn::gelu(v), w); }, x), 1e-4);
  EXPECT_LT(tn::grad_check([&](const Var& v) { return project(tn::sigmoid(v), w); }, x), 1e-4);
  EXPECT_LT(tn::grad_check([&](const Var& v) { return tn::sum(tn::gather_cols(v, labels)); }, x), 1e-4);
  const Tensor t1 = random_tensor({4}, rng);
  const Tensor x1 = random_tensor({4}, rng, 2.0);
  EXPECT_LT(tn::grad_check([&](const Var& v) { return tn::huber_loss(v, t1); }, x1), 1e-4);
}

TEST(CausalAttention, FutureTokensDoNotAffectPast) {
  tn::Rng rng(5);
  const std::size_t batch = 2, time = 6, width = 16;
  tn::EncoderLayer layer(width, 4, 32, rng);
  Tensor x = random_tensor({batch * time, width}, rng);
  const Tensor base = layer.forward(Var(x), batch, time).value();
  for (std::size_t t = 0; t + 1 < time; ++t) {
    Tensor y = x;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t u = t + 1; u < time; ++u) {
        for (std::size_t c = 0; c < width; ++c) y.at(b * time + u, c) += 3.0;
      }
    }
    const Tensor out = layer.forward(Var(y), batch, time).value();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t u = 0; u <= t; ++u) {
        for (std::size_t c = 0; c < width; ++c) {
          EXPECT_EQ(out.at(b * time + u, c), base.at(b * time + u, c));
        }
      }
    }
  }
}

TEST(Dueling, AdvantageShiftInvariance) {
  Tensor v({2, 1}, {0.5, -1.0});
  Tensor a({2, 3}, {1.0, 2.0, 3.0, -1.0, 0.0, 4.0});
  Tensor shifted = a;
  for (double& x : shifted.data()) x += 17.25;
  const Tensor q0 = tn::dueling_combine(Var(v), Var(a)).value();
  const Tensor q1 = tn::dueling_combine(Var(v), Var(shifted)).value();
  for (std::size_t i = 0; i < q0.size(); ++i) EXPECT_NEAR(q0[i], q1[i], 1e-9);
}

TEST(AdamW, ZeroGradientNoDecayKeepsParameters) {
  Var p(Tensor({3}, {1.0, -2.0, 0.5}), true);
  tn::AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  tn::AdamW opt({{"p", p}}, cfg);
  p.mutable_grad().fill(0.0);
  opt.step();
  EXPECT_EQ(p.value()[0], 1.0);
  EXPECT_EQ(p.value()[1], -2.0);
  EXPECT_EQ(p.value()[2], 0.5);
}

TEST(AdamW, ClipsToNormBeforeMoments) {
  Var p(Tensor({1}, {0.0}), true);
  tn::AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.clip_norm = 1.0;
  tn::AdamW opt({{"p", p}}, cfg);
  p.mutable_grad()[0] = 8.0;
  const auto report = opt.step();
  EXPECT_DOUBLE_EQ(report.grad_norm, 8.0);
  EXPECT_DOUBLE_EQ(report.clip_scale, 1.0 / 8.0);
  EXPECT_DOUBLE_EQ(report.grad_norm * report.clip_scale, 1.0);
  // First bias-corrected step is lr * g_c / (|g_c| + eps) with g_c the clipped gradient.
  EXPECT_DOUBLE_EQ(p.value()[0], -cfg.learning_rate * 1.0 / (1.0 + cfg.eps));
  EXPECT_EQ(p.grad()[0], 0.0);
}

TEST(AdamW, MissingAndNonFiniteGradients) {
  Var p(Tensor({2}), true);
  tn::AdamW opt({{"layer.weight", p}}, {});
  try {
    opt.step();
    FAIL() << "expected missing-gradient error";
  } catch (const std::logic_error& e) {
    EXPECT_NE(std::string(e.what()).find("layer.weight"), std::string::npos);
  }
  p.mutable_grad()[1] = std::numeric_limits<double>::infinity();
  try {
    opt.step();
    FAIL() << "expected non-finite error";
  } catch (const tn::NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.weight"), std::string::npos);
  }
}

namespace {

std::vector<Tensor> train_tiny(std::uint64_t seed) {
  tn::Rng rng(seed);
  tn::Dense l1(4, 6, rng), l2(6, 1, rng);
  tn::ParamList ps;
  l1.collect("l1", ps);
  l2.collect("l2", ps);
  tn::AdamW opt(ps, {});
  for (int step = 0; step < 2; ++step) {
    const Tensor x = random_tensor({8, 4}, rng);
    const Tensor y = random_tensor({8, 1}, rng);
    tn::mse_loss(l2.forward(tn::relu(l1.forward(Var(x)))), y).backward();
    opt.step();
  }
  return tn::snapshot_values(ps);
}

}  // namespace

TEST(AdamW, DeterministicAcrossRuns) {
  const auto a = train_tiny(42), b = train_tiny(42);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].size(), b[i].size());
    EXPECT_EQ(std::memcmp(a[i].ptr(), b[i].ptr(), a[i].size() * sizeof(double)), 0);
  }
}

TEST(PlateauScheduler, HalvesAfterPatience) {
  Var p(Tensor({1}), true);
  tn::AdamW opt({{"p", p}}, {});
  tn::PlateauScheduler sched(0.5, 1);
  EXPECT_FALSE(sched.observe(1.0, opt));
  EXPECT_FALSE(sched.observe(1.0, opt));
  EXPECT_TRUE(sched.observe(1.0, opt));
  EXPECT_DOUBLE_EQ(opt.learning_rate(), 1.5e-4);
}

TEST(Checkpoint, RoundTripAndValidation) {
  tn::Rng rng(9);
  tn::EncoderLayer layer(8, 2, 16, rng);
  tn::ParamList ps;
  layer.collect("enc", ps);
  const auto path = std::filesystem::temp_directory_path() / "twinbench_nn_ckpt.bin";
  tn::save_params(path, ps);
  const auto original = tn::checksum(ps);
  for (auto& p : ps) p.var.mutable_value().fill(0.0);
  EXPECT_NE(tn::checksum(ps), original);
  tn::load_params(path, ps);
  EXPECT_EQ(tn::checksum(ps), original);

  std::string bytes = tn::encode_tensors(tn::to_named(ps));
  EXPECT_EQ(bytes.substr(0, 4), "TBNN");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);  // little-endian version word
  bytes[4] = 9;
  EXPECT_THROW(tn::decode_tensors(bytes), std::runtime_error);
  EXPECT_THROW(tn::decode_tensors(bytes.substr(0, 10)), std::runtime_error);

  tn::ParamList wrong{{"enc.norm1.gain", Var(Tensor({3}), true)}};
  EXPECT_THROW(tn::assign_named(tn::to_named(ps), wrong), std::runtime_error);
  std::filesystem::remove(path);
}
