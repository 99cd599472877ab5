// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "geneses/conditioner.hpp"
#include "geneses/degrade.hpp"
#include "support/expect.hpp"

namespace geneses::cond {
namespace {

AudioBuffer speech(int speaker, std::uint64_t seed, std::size_t n) {
  degrade::SyntheticSpeakers src;
  auto b = src.utterance(speaker, n, 16000, Rng(seed));
  b.samples.resize(n, 0.0f);
  return b;
}

ConditionerConfig small(Frontend f = Frontend::log_mel) {
  auto c = ConditionerConfig::desk();
  c.frontend = f;
  c.trunk_dim = 32;
  c.n_heads = 2;
  c.cond_dim = 16;
  c.lora.rank = 4;
  c.lora.alpha = 1.0;
  c.lora.dropout = 0.0;
  return c;
}

bool is_adapter(const std::string& name) { return name.ends_with(".lora_a") || name.ends_with(".lora_b"); }

bool all_zero(const Tensor<float>& t) {
  for (float v : t.data())
    if (v != 0.0f) return false;
  return true;
}

// Names of parameters that receive a nonzero gradient from a squared-output loss.
std::set<std::string> nonzero_gradients(const Conditioner& c, const AudioBuffer& x) {
  const auto f = c.features(x);
  Tape<float> tape;
  auto on = tape.activate();
  auto y = c.forward(reshape(f, {1, f.dim(0), f.dim(1)}), false);
  auto g = tape.backward(mean(square(y)));
  std::set<std::string> out;
  for (const auto& p : c.parameters())
    if (g.contains(p.tensor) && !all_zero(g[p.tensor])) out.insert(p.name);
  return out;
}

TEST(ConditionerConfig, FrameArithmetic) {
  const auto c = ConditionerConfig::desk();
  EXPECT_EQ(c.frames(16000), 50);
  EXPECT_EQ(c.frames(16001), 51);
  EXPECT_EQ(c.frames(1), 1);
  EXPECT_DOUBLE_EQ(c.frame_rate(), 50.0);
  EXPECT_DOUBLE_EQ(ConditionerConfig::micro().frame_rate(), 250.0);
}

TEST(ConditionerConfig, FullPresetIs1024Dimensional) {
  const auto p = ConditionerConfig::full();
  EXPECT_EQ(p.cond_dim, 1024);
  EXPECT_EQ(p.lora.rank, 64);
  EXPECT_DOUBLE_EQ(p.lora.alpha, 16.0);
  EXPECT_DOUBLE_EQ(p.lora.scaling(), 0.25);
}

TEST(ConditionerConfig, JsonRoundTripAndValidation) {
  const auto c = ConditionerConfig::micro();
  const nlohmann::json j = c;
  const auto back = j.get<ConditionerConfig>();
  EXPECT_EQ(back.frontend, Frontend::waveform);
  EXPECT_EQ(back.hop, c.hop);
  auto bad = j;
  bad["lora"]["rnak"] = 3;
  EXPECT_ERRC(bad.get<ConditionerConfig>(), Errc::config);
  auto heads = j;
  heads["n_heads"] = 3;
  EXPECT_ERRC(heads.get<ConditionerConfig>(), Errc::config);
  auto fe = j;
  fe["frontend"] = "ssl";
  EXPECT_ERRC(fe.get<ConditionerConfig>(), Errc::config);
}

TEST(Conditioner, OutputFramesFollowTheHop) {
  for (auto f : {Frontend::log_mel, Frontend::waveform}) {
    const Conditioner c(small(f), Rng(1));
    for (std::size_t n : {320u, 4000u, 16000u, 16100u}) {
      const auto y = c.extract(speech(0, n, n));
      EXPECT_EQ(y.dim(0), c.config().frames(n)) << frontend_name(f) << " " << n;
      EXPECT_EQ(y.dim(1), 16);
    }
  }
}

TEST(Conditioner, EmptyInputIsAContractError) {
  const Conditioner c(small(), Rng(2));
  EXPECT_ERRC(c.extract(AudioBuffer{{}, 16000}), Errc::contract);
  EXPECT_ERRC(c.extract(AudioBuffer{std::vector<float>(800, 0.1f), 8000}), Errc::config);
}

TEST(Conditioner, ZeroInitAdaptersLeaveTheExtractorUnchanged) {
  Conditioner c(small(), Rng(3));
  const auto x = speech(2, 4, 8000);
  const auto before = c.extract(x);
  c.attach_lora(Rng(4));
  ASSERT_TRUE(c.has_lora());
  const auto after = c.extract(x);
  ASSERT_EQ(before.shape(), after.shape());
  for (std::int64_t i = 0; i < before.numel(); ++i) ASSERT_EQ(before[i], after[i]);
}

TEST(Conditioner, FrozenTrunkBaseWeightsGetNoGradient) {
  Conditioner c(small(), Rng(5));
  c.attach_lora(Rng(6));
  c.set_trunk_frozen(true);
  const auto x = speech(1, 7, 6400);
  const auto f = c.features(x);
  Tape<float> tape;
  auto on = tape.activate();
  auto g = tape.backward(mean(square(c.forward(reshape(f, {1, f.dim(0), f.dim(1)}), false))));
  for (const auto& p : c.trunk_parameters()) {
    if (is_adapter(p.name)) continue;
    EXPECT_FALSE(p.tensor.requires_grad()) << p.name;
    if (g.contains(p.tensor)) EXPECT_TRUE(all_zero(g[p.tensor])) << p.name;
  }
}

TEST(Conditioner, GradientPartitionIsExactlyAdaptersAndOutput) {
  // B is zero at attach time, which would also zero A's gradient; give every
  // B a random value so the partition is visible.
  Conditioner c(small(), Rng(8));
  c.attach_lora(Rng(9));
  c.set_trunk_frozen(true);
  Rng rng(10);
  std::set<std::string> expected;
  for (const auto& p : c.parameters()) {
    if (p.name.ends_with(".lora_b")) {
      Tensor<float> t = p.tensor;
      for (auto& v : t.mutable_data()) v = static_cast<float>(0.05 * rng.normal());
    }
    if (is_adapter(p.name) || p.name.rfind("output.", 0) == 0) expected.insert(p.name);
  }
  EXPECT_EQ(nonzero_gradients(c, speech(3, 11, 6400)), expected);
}

TEST(Conditioner, UnfrozenTrunkTrainsEverything) {
  Conditioner c(small(), Rng(12));
  c.set_trunk_frozen(false);
  const auto got = nonzero_gradients(c, speech(4, 13, 6400));
  for (const auto& p : c.parameters()) EXPECT_TRUE(got.count(p.name)) << p.name;
}

TEST(Conditioner, TrainingDropoutOnlyTouchesTheAdapterPath) {
  auto cfg = small();
  cfg.lora.dropout = 0.5;
  Conditioner c(cfg, Rng(14));
  c.attach_lora(Rng(15));
  const auto f = c.features(speech(0, 16, 3200));
  const auto x = reshape(f, {1, f.dim(0), f.dim(1)});
  auto g = Tape<float>::suspend();
  // zero B: dropout cannot change anything
  const auto a = c.forward(x, true, Rng(1));
  const auto b = c.forward(x, false);
  for (std::int64_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a[i], b[i]);
}

TEST(Pretrain, MaskedReconstructionLossDropsBy30Percent) {
  Conditioner c(ConditionerConfig::desk(), Rng(17));
  std::vector<AudioBuffer> corpus;
  for (int i = 0; i < 48; ++i) corpus.push_back(speech(i % 6, 100 + static_cast<std::uint64_t>(i), 16000));
  PretrainConfig pc;
  pc.steps = 1000;
  pc.seed = 18;
  const auto losses = pretrain_conditioner(c, corpus, pc);
  ASSERT_EQ(losses.size(), 1000u);
  auto window_mean = [&](std::size_t from) {
    double s = 0;
    for (std::size_t i = from; i < from + 50; ++i) s += losses[i];
    return s / 50.0;
  };
  const double first = window_mean(0);
  const double last = window_mean(950);
  EXPECT_LE(last, 0.7 * first) << "first " << first << " last " << last;
  // trunk frozen again afterwards, per the config
  for (const auto& p : c.trunk_parameters()) EXPECT_FALSE(p.tensor.requires_grad()) << p.name;
}

TEST(Pretrain, IsDeterministic) {
  std::vector<AudioBuffer> corpus{speech(0, 1, 4000), speech(5, 2, 4000)};
  PretrainConfig pc;
  pc.steps = 5;
  pc.batch = 2;
  Conditioner a(small(), Rng(19));
  Conditioner b(small(), Rng(19));
  EXPECT_EQ(pretrain_conditioner(a, corpus, pc), pretrain_conditioner(b, corpus, pc));
  EXPECT_EQ(nn::parameter_hash(a.parameters()), nn::parameter_hash(b.parameters()));
}

TEST(Pretrain, SkippingKeepsTheRandomTrunk) {
  auto cfg = small();
  cfg.pretrain = false;
  const Conditioner c(cfg, Rng(20));
  const Conditioner d(small(), Rng(20));
  EXPECT_FALSE(c.config().pretrain);
  EXPECT_EQ(nn::parameter_hash(c.parameters()), nn::parameter_hash(d.parameters()));
}

TEST(Pretrain, RejectsEmptyCorpusAndBadMask) {
  Conditioner c(small(), Rng(21));
  EXPECT_ERRC(pretrain_conditioner(c, {}, PretrainConfig{}), Errc::contract);
  PretrainConfig pc;
  pc.mask_prob = 1.0;
  EXPECT_ERRC(pretrain_conditioner(c, {speech(0, 1, 4000)}, pc), Errc::config);
}

}  // namespace
}  // namespace geneses::cond
