// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "geneses/audio.hpp"
#include "geneses/codec.hpp"
#include "geneses/conditioner.hpp"
#include "geneses/degrade.hpp"
#include "geneses/flow.hpp"
#include "geneses/mmdit.hpp"
#include "geneses/ops.hpp"

namespace geneses {
namespace {

void BM_Matmul(benchmark::State& state) {
  const auto n = state.range(0);
  const auto a = randn<float>({n, n}, 1);
  const auto b = randn<float>({n, n}, 2);
  auto off = Tape<float>::suspend();
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_AttentionForwardBackward(benchmark::State& state) {
  const auto len = state.range(0);
  auto q = randn<float>({4, len, 64}, 1);
  q.set_requires_grad(true);
  const auto k = randn<float>({4, len, 64}, 2);
  const auto v = randn<float>({4, len, 64}, 3);
  for (auto _ : state) {
    Tape<float> tape;
    auto active = tape.activate();
    auto loss = sum(square(nn::attention_heads(q, k, v, 4)));
    benchmark::DoNotOptimize(tape.backward(loss));
  }
}
BENCHMARK(BM_AttentionForwardBackward)->Arg(128)->Arg(256);

MmDitConfig micro_dit() {
  MmDitConfig c;
  c.latent_dim_per_speaker = 16;
  c.mlp_ratio = 2;
  c.timestep_embed_dim = 128;
  c.latent_frame_rate = 250;
  c.cond_frame_rate = 250;
  c.max_sequence_seconds = 1.0;
  return c;
}

void BM_MmDitForward(benchmark::State& state) {
  const auto cfg = micro_dit();
  MmDit<float> model(cfg, Rng(1));
  const auto x = randn<float>({8, 125, 32}, 2);
  const auto c = randn<float>({8, 125, cfg.cond_dim}, 3);
  auto off = Tape<float>::suspend();
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, c, 0.5));
}
BENCHMARK(BM_MmDitForward)->Unit(benchmark::kMillisecond);

void BM_FlowTrainStep(benchmark::State& state) {
  const auto cfg = micro_dit();
  MmDit<float> model(cfg, Rng(1));
  nn::AdamW<float> opt(model.parameters(), nn::AdamWConfig{1e-3, 0.9, 0.999, 1e-8, 0.0});
  flow::TrainStepContext<float> ctx{flow::predictor_of(model), {}, &opt, nn::LrSchedule::standard(1e-3, 1000000)};
  const auto x1 = randn<float>({8, 125, 32}, 2);
  const auto c = randn<float>({8, 125, cfg.cond_dim}, 3);
  std::uint64_t step = 0;
  for (auto _ : state) benchmark::DoNotOptimize(flow::train_step(ctx, c, x1, Rng(4).split(step++)));
}
BENCHMARK(BM_FlowTrainStep)->Unit(benchmark::kMillisecond);

void BM_EulerSample(benchmark::State& state) {
  const auto cfg = micro_dit();
  MmDit<float> model(cfg, Rng(1));
  const auto c = randn<float>({125, cfg.cond_dim}, 3);
  const auto x0 = randn<float>({125, 32}, 2);
  auto off = Tape<float>::suspend();
  for (auto _ : state) benchmark::DoNotOptimize(flow::euler_sample(model, c, x0, 0.01));
}
BENCHMARK(BM_EulerSample)->Unit(benchmark::kMillisecond);

audio::AudioBuffer one_second() {
  degrade::SyntheticSpeakers src;
  auto b = src.utterance(2, 16000, 16000, Rng(5));
  b.samples.resize(16000, 0.0f);
  return b;
}

void BM_Stft(benchmark::State& state) {
  const auto b = one_second();
  for (auto _ : state) benchmark::DoNotOptimize(audio::stft(b, 512, 128));
}
BENCHMARK(BM_Stft);

void BM_VaeEncodeDecode(benchmark::State& state) {
  const codec::Vae vae(codec::VaeConfig::micro(), Rng(1));
  const auto b = one_second();
  for (auto _ : state) benchmark::DoNotOptimize(vae.decode_track(vae.encode_mean(b), b.size()));
}
BENCHMARK(BM_VaeEncodeDecode)->Unit(benchmark::kMillisecond);

void BM_ConditionerExtract(benchmark::State& state) {
  const cond::Conditioner c(cond::ConditionerConfig::desk(), Rng(1));
  const auto b = one_second();
  for (auto _ : state) benchmark::DoNotOptimize(c.extract(b));
}
BENCHMARK(BM_ConditionerExtract)->Unit(benchmark::kMillisecond);

void BM_DegradeComplexChain(benchmark::State& state) {
  const auto b = one_second();
  const auto cfg = degrade::ChainConfig::complex();
  std::uint64_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(degrade::run_chain(cfg, b, Rng(7).split(i++)));
}
BENCHMARK(BM_DegradeComplexChain)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace geneses

BENCHMARK_MAIN();
