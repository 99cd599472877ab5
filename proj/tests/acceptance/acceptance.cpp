// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
// exits non-zero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "geneses/checkpoint.hpp"
#include "geneses/conditioner.hpp"
#include "geneses/degrade.hpp"
#include "geneses/flow.hpp"
#include "geneses/metrics.hpp"
#include "geneses/mmdit.hpp"
#include "geneses/pipeline.hpp"
#include "support/gradcases.hpp"
#include "support/mixture.hpp"
#include "support/params.hpp"
#include "support/tempdir.hpp"

namespace {

namespace fs = std::filesystem;
using namespace geneses;
using nlohmann::json;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

// ---- 1: autodiff -------------------------------------------------------------

Outcome autodiff() {
  double worst = 0.0;
  std::string worst_name;
  int failures = 0;
  const auto cases = testing::primitive_cases();
  for (const auto& c : cases) {
    const double err = c.run();
    if (!(err < 1e-4)) ++failures;
    if (err >= worst) {
      worst = err;
      worst_name = c.name;
    }
  }
  for (std::uint64_t seed : {101u, 202u, 303u}) {
    const double err = testing::check_composite(seed).max_rel_error;
    if (!(err < 1e-4)) ++failures;
    if (err >= worst) {
      worst = err;
      worst_name = "composite " + std::to_string(seed);
    }
  }
  return {failures == 0, std::to_string(cases.size()) + " primitives + 3 composites, worst rel err " + fmt(worst) +
                             " (" + worst_name + ")"};
}

// ---- 2: Euler order ----------------------------------------------------------

Outcome integrator_order() {
  std::vector<double> errors;
  for (double h : {0.1, 0.05, 0.025, 0.0125}) {
    const auto x = flow::euler_integrate<double>([](const Tensor<double>& s, double) { return neg(s); },
                                                 Tensor<double>::scalar(1.0), h);
    errors.push_back(std::abs(x.item() - std::exp(-1.0)));
  }
  bool ok = true;
  std::string ratios;
  for (std::size_t i = 1; i < errors.size(); ++i) {
    const double r = errors[i] / errors[i - 1];
    ok = ok && r >= 0.4 && r <= 0.6;
    ratios += (i > 1 ? ", " : "") + fmt(r);
  }
  return {ok, "error ratios per halving: " + ratios};
}

// ---- 3: distribution recovery -------------------------------------------------

Outcome distribution_recovery() {
  MmDitConfig c;
  c.n_layers = 2;
  c.model_dim = 64;
  c.n_heads = 4;
  c.latent_dim_per_speaker = 2;
  c.n_speakers = 1;
  c.cond_dim = 0;
  c.timestep_embed_dim = 64;
  c.mlp_ratio = 4;
  const int steps = 5000;
  const std::int64_t batch = 256;
  MmDit<float> model(c, Rng(31));
  nn::AdamW<float> opt(model.parameters(), nn::AdamWConfig{2e-3, 0.9, 0.999, 1e-8, 0.0});
  flow::TrainStepContext<float> ctx{flow::predictor_of(model), {}, &opt, nn::LrSchedule::standard(2e-3, steps)};
  const testing::Mixture2d target;
  const Rng data(32), noise(33);
  for (int s = 0; s < steps; ++s) {
    const auto x1 = target.sample(batch, data.split(static_cast<std::uint64_t>(s)));
    flow::train_step(ctx, Tensor<float>(), x1, noise.split(static_cast<std::uint64_t>(s)));
  }

  const std::int64_t n = 5000;
  auto off = Tape<float>::suspend();
  const auto out = flow::euler_sample(model, Tensor<float>(), randn<float>({n, 1, 2}, 34), 0.01);
  // component means by nearest true mean; covariance over all samples
  std::array<std::array<double, 2>, 2> sums{};
  std::array<double, 2> counts{};
  double mx = 0, my = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = out[2 * i], y = out[2 * i + 1];
    const auto d = [&](int k) { return std::hypot(x - target.means[k][0], y - target.means[k][1]); };
    const int k = d(0) <= d(1) ? 0 : 1;
    sums[k][0] += x;
    sums[k][1] += y;
    counts[k] += 1;
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  std::array<double, 4> cov{};
  for (std::int64_t i = 0; i < n; ++i) {
    const double dx = out[2 * i] - mx, dy = out[2 * i + 1] - my;
    cov[0] += dx * dx;
    cov[1] += dx * dy;
    cov[3] += dy * dy;
  }
  for (auto& v : cov) v /= static_cast<double>(n - 1);
  cov[2] = cov[1];
  double mean_err = 0.0;
  for (int k = 0; k < 2; ++k) {
    if (counts[k] == 0) return {false, "component " + std::to_string(k) + " received no samples"};
    mean_err = std::max(mean_err, std::hypot(sums[k][0] / counts[k] - target.means[k][0],
                                             sums[k][1] / counts[k] - target.means[k][1]));
  }
  const auto truth = target.covariance();
  double frob = 0.0;
  for (int i = 0; i < 4; ++i) frob += (cov[i] - truth[i]) * (cov[i] - truth[i]);
  frob = std::sqrt(frob);
  return {mean_err < 0.1 && frob < 0.1, std::to_string(steps) + " steps; worst component mean error " + fmt(mean_err) +
                                            ", covariance Frobenius error " + fmt(frob) + " (" + fmt(cov[0]) + " " + fmt(cov[1]) + " " + fmt(cov[3]) + ")" + ", split " +
                                            fmt(counts[0] / n, 3) + "/" + fmt(counts[1] / n, 3)};
}

// ---- 4, 5: end-to-end separation ---------------------------------------------

struct RunOptions {
  fs::path work_root;
  std::string config;  // file; empty for the micro preset
  std::vector<std::string> overrides;
  bool verbose = false;
};

json load_doc(const RunOptions& o) {
  json doc = {{"name", "micro"}};
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    doc = json::parse(in);
  }
  for (const auto& s : o.overrides) pipeline::apply_override(doc, s);
  return doc;
}

json run_pipeline(const RunOptions& o, const std::string& tag, degrade::Regime regime) {
  json doc = load_doc(o);
  doc["work_dir"] = (o.work_root / tag).string();
  doc["data"]["regime"] = degrade::regime_name(regime);
  const auto cfg = pipeline::config_from_json(doc);
  fs::remove_all(cfg.root());
  const pipeline::Log log = o.verbose ? pipeline::Log{[&](const std::string& s) { std::cerr << "  [" << tag << "] " << s << "\n"; }}
                                      : pipeline::Log{};
  pipeline::cmd_gen_data(cfg, log);
  const auto vae = pipeline::cmd_train_vae(cfg, log);
  pipeline::cmd_pretrain_cond(cfg, log);
  const auto flow = pipeline::cmd_train_flow(cfg, log);
  pipeline::cmd_infer(cfg, "test", cfg.root() / "infer", log);
  auto eval = pipeline::cmd_eval(cfg, "test", cfg.root() / "infer", cfg.root() / "eval", log);
  eval["vae_snr_db"] = vae["test_snr_db"];
  eval["flow_final_loss"] = flow["final_loss"];
  return eval;
}

Outcome toy_separation(const RunOptions& o) {
  const auto s = run_pipeline(o, "noise_only", degrade::Regime::noise_only);
  const double imp = s["si_sdr_improvement_db"];
  const double slot = s["slot_order_rate"];
  return {imp >= 5.0 && slot >= 0.95,
          "SI-SDR " + fmt(s["si_sdr_db"].get<double>()) + " dB vs mixture " + fmt(s["input_si_sdr_db"].get<double>()) +
              " dB (improvement " + fmt(imp) + " dB, need >= 5); slot order best on " + fmt(100 * slot, 3) +
              "% (need >= 95%); vae SNR " + fmt(s["vae_snr_db"].get<double>(), 3) + " dB"};
}

Outcome complex_robustness(const RunOptions& o) {
  const auto s = run_pipeline(o, "complex", degrade::Regime::complex);
  const double imp = s["si_sdr_improvement_db"];
  const double lsd = s["lsd_db"], in_lsd = s["input_lsd_db"];
  return {imp >= 3.0 && lsd < in_lsd, "SI-SDR improvement " + fmt(imp) + " dB (need >= 3); LSD " + fmt(lsd) +
                                          " dB vs degraded " + fmt(in_lsd) + " dB (need lower)"};
}

// ---- 6: mixer ----------------------------------------------------------------

Outcome mixer_accuracy() {
  Rng rng(606);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    Rng r = rng.split(static_cast<std::uint64_t>(i));
    const std::size_t n = 200 + r.below(3000);
    audio::AudioBuffer s{std::vector<float>(n), 16000}, noise{std::vector<float>(n + 500), 16000};
    const double gs = 0.01 + r.uniform(), gn = 0.01 + r.uniform();
    for (auto& v : s.samples) v = static_cast<float>(gs * r.normal());
    for (auto& v : noise.samples) v = static_cast<float>(gn * r.normal());
    const double snr = -5.0 + 25.0 * r.uniform();
    const std::size_t offset = r.below(500);
    const auto mix = degrade::mix_at_snr(s, noise, snr, offset);
    double ps = 0.0, pn = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double d = static_cast<double>(mix.audio.samples[k]) - s.samples[k];
      ps += static_cast<double>(s.samples[k]) * s.samples[k];
      pn += d * d;
    }
    worst = std::max(worst, std::abs(10.0 * std::log10(ps / pn) - snr));
  }
  return {worst <= 0.01, "1000 triples, worst |achieved - target| " + fmt(worst) + " dB"};
}

// ---- 7: degradation determinism ------------------------------------------------

std::string tree_bytes(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    all += fs::relative(f, root).string() + '\n';
    all.append(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return all;
}

Outcome degradation_determinism() {
  testing::TempDir dir;
  degrade::SyntheticSpeakers source;
  degrade::DatasetConfig dc;
  dc.n_samples = 24;
  dc.regime = degrade::Regime::complex;
  dc.seed = 707;
  dc.duration = 0.5;
  degrade::build_dataset(source, dc, dir.path() / "a");
  const auto entries = degrade::build_dataset(source, dc, dir.path() / "b");
  const bool same = tree_bytes(dir.path() / "a") == tree_bytes(dir.path() / "b");

  int replayed = 0, stages = 0;
  for (std::size_t i = 0; i < dc.n_samples; ++i) {
    const auto s = degrade::make_sample(source, dc, i);
    const auto again = audio::quantize_pcm16(degrade::replay_chain(s.chain, s.mixture));
    if (again.samples == s.degraded.samples) ++replayed;
    stages += static_cast<int>(s.chain.stages.size());
  }
  // stored records replay too
  int stored = 0;
  for (const auto& e : entries) {
    const auto s = degrade::load_sample(dir.path() / "b", e);
    const auto mixture = degrade::sum_tracks(s.clean_a, s.clean_b);
    if (audio::quantize_pcm16(degrade::replay_chain(e.chain, mixture)).samples == s.degraded.samples) ++stored;
  }
  const auto n = static_cast<int>(dc.n_samples);
  return {same && replayed == n && stored == n,
          std::string("datasets ") + (same ? "bit-identical" : "DIFFER") + "; in-memory replay " +
              std::to_string(replayed) + "/" + std::to_string(n) + ", stored replay " + std::to_string(stored) + "/" +
              std::to_string(n) + " (" + std::to_string(stages) + " stage applications)"};
}

// ---- 8: LoRA -----------------------------------------------------------------

bool is_adapter(const std::string& name) { return name.ends_with(".lora_a") || name.ends_with(".lora_b"); }

Outcome lora_contracts() {
  std::vector<std::string> notes;
  bool ok = true;

  // zero-init adapters leave the conditioner output bit-identical
  auto cc = cond::ConditionerConfig::micro();
  cc.lora.dropout = 0.0;
  cond::Conditioner cnd(cc, Rng(81));
  testing::randomize_parameters(cnd.parameters(), 82);
  const auto feats = reshape(randn<float>({20, cc.feature_dim()}, 83), {1, 20, cc.feature_dim()});
  Tensor<float> before, after;
  {
    auto off = Tape<float>::suspend();
    before = cnd.forward(feats, false);
    cnd.attach_lora(Rng(84));
    cnd.set_trunk_frozen(true);
    after = cnd.forward(feats, false);
  }
  const bool exact = std::memcmp(before.data().data(), after.data().data(), before.numel() * sizeof(float)) == 0;
  ok = ok && exact;
  notes.push_back(std::string("zero-init ") + (exact ? "exact" : "DIFFERS"));

  // merged weights
  nn::Linear<float> base(48, 24, true, Rng(85));
  nn::LoraAdapter<float> ad(48, 24, nn::LoraConfig{8, 16.0, 0.0}, Rng(86));
  testing::randomize_parameters(nn::ParameterList<float>{{"b", ad.b}}, 87);
  const auto x = randn<float>({7, 48}, 88);
  double merge_err = 0.0;
  {
    auto off = Tape<float>::suspend();
    const auto y1 = nn::lora_forward(base, ad, x, false);
    const auto y2 = nn::merge_lora(base, ad).forward(x);
    for (std::int64_t i = 0; i < y1.numel(); ++i) merge_err = std::max(merge_err, std::abs(double(y1[i]) - y2[i]));
  }
  ok = ok && merge_err <= 1e-6;
  notes.push_back("merge max abs diff " + fmt(merge_err));

  // gradient partition with a frozen trunk
  for (const auto& p : cnd.parameters())
    if (p.name.ends_with(".lora_b")) testing::randomize_parameters(nn::ParameterList<float>{p}, 89);
  std::set<std::string> expected, got;
  for (const auto& p : cnd.parameters())
    if (is_adapter(p.name) || p.name.starts_with("output.")) expected.insert(p.name);
  {
    Tape<float> tape;
    auto active = tape.activate();
    const auto grads = tape.backward(mean(square(cnd.forward(feats, true, Rng(90)))));
    for (const auto& p : cnd.parameters()) {
      if (!grads.contains(p.tensor)) continue;
      const auto g = grads[p.tensor];
      bool nonzero = false;
      for (std::int64_t i = 0; i < g.numel(); ++i) nonzero = nonzero || g[i] != 0.0f;
      if (nonzero) got.insert(p.name);
    }
  }
  const bool partition = got == expected;
  ok = ok && partition;
  notes.push_back("nonzero grads on " + std::to_string(got.size()) + " tensors, expected " +
                  std::to_string(expected.size()) + (partition ? " (match)" : " (MISMATCH)"));

  const double scaling = cond::ConditionerConfig::full().lora.scaling();
  ok = ok && scaling == 0.25;
  notes.push_back("full preset scaling " + fmt(scaling));
  std::string d;
  for (const auto& n : notes) d += (d.empty() ? "" : "; ") + n;
  return {ok, d};
}

// ---- 9: logit-normal ------------------------------------------------------------

Outcome logit_normal() {
  Rng rng(909);
  const int n = 100000;
  double mean = 0.0, sq = 0.0;
  bool inside = true;
  for (int i = 0; i < n; ++i) {
    const double t = flow::sample_timestep(rng);
    inside = inside && t > 0.0 && t < 1.0;
    const double z = std::log(t / (1.0 - t));
    mean += z;
    sq += z * z;
  }
  mean /= n;
  const double sd = std::sqrt(sq / n - mean * mean);
  return {inside && std::abs(mean) <= 0.02 && std::abs(sd - 1.0) <= 0.02,
          "mean logit " + fmt(mean) + ", std " + fmt(sd) + (inside ? ", all in (0,1)" : ", OUT OF RANGE")};
}

// ---- 10: metric identities ----------------------------------------------------

Outcome metric_identities() {
  degrade::SyntheticSpeakers src;
  auto a = src.utterance(1, 16000, 16000, Rng(1001));
  a.samples.resize(16000, 0.0f);
  for (std::size_t i = 0; i < a.size(); ++i) a.samples[i] += 1e-3f * std::sin(0.37f * static_cast<float>(i));
  auto scaled = a;
  for (auto& v : scaled.samples) v *= 3.5f;
  const double cap_same = metrics::si_sdr(a.samples, a.samples);
  const double cap_scaled = metrics::si_sdr(a.samples, scaled.samples);
  const double lsd0 = metrics::lsd(a, a), mcd0 = metrics::mcd(a, a), stoi1 = metrics::intelligibility_proxy(a, a);
  // broadband reference so no bin sits on the power floor; the estimate is
  // scaled by 1/sqrt(10), a power ratio of 10 in every bin
  audio::AudioBuffer wide{std::vector<float>(8000), 16000};
  Rng nr(1002);
  for (auto& v : wide.samples) v = static_cast<float>(0.1 * nr.normal());
  auto quiet = wide;
  for (auto& v : quiet.samples) v = static_cast<float>(v / std::sqrt(10.0));
  const double lsd10 = metrics::lsd(wide, quiet);
  const bool ok = cap_same == metrics::kSiSdrCap && cap_scaled == metrics::kSiSdrCap && lsd0 == 0.0 && mcd0 == 0.0 &&
                  std::abs(stoi1 - 1.0) < 1e-12 && std::abs(lsd10 - 10.0) < 1e-4;
  return {ok, "si_sdr(a,a) " + fmt(cap_same) + ", si_sdr(a,3.5a) " + fmt(cap_scaled) + ", lsd(a,a) " + fmt(lsd0) +
                  ", mcd(a,a) " + fmt(mcd0) + ", proxy(a,a) " + fmt(stoi1, 12) + ", lsd 10x power " + fmt(lsd10, 8)};
}

// ---- 11: frozen VAE, checkpoint, resume ----------------------------------------

Outcome frozen_and_resume() {
  testing::TempDir a, b;
  auto tiny = [](const fs::path& root) {
    return pipeline::config_from_json(
        {{"name", "micro"},
         {"work_dir", root.string()},
         {"seed", 11},
         {"data", {{"train", 8}, {"test", 2}, {"duration", 0.25}}},
         {"vae_train", {{"steps", 5}, {"batch", 2}}},
         {"pretrain", {{"steps", 5}, {"batch", 2}}},
         {"mmdit", {{"n_layers", 2}, {"model_dim", 32}, {"n_heads", 2}, {"timestep_embed_dim", 32}}},
         {"flow", {{"steps", 100}, {"batch", 2}, {"checkpoint_every", 0}}}});
  };
  const auto ca = tiny(a.path()), cb = tiny(b.path());
  json vae_summary;
  for (const auto* c : {&ca, &cb}) {
    pipeline::cmd_gen_data(*c);
    vae_summary = pipeline::cmd_train_vae(*c);
    pipeline::cmd_pretrain_cond(*c);
  }
  const auto full = pipeline::cmd_train_flow(ca);
  pipeline::cmd_train_flow(cb, {}, 50);
  const auto resumed = pipeline::cmd_train_flow(cb);
  const bool resume_ok = full["parameter_hash"] == resumed["parameter_hash"] && resumed["steps_done"] == 100;

  auto vae = pipeline::make_vae(ca);
  ckpt::restore(vae.parameters(), ckpt::load_checkpoint(ca.vae_checkpoint()).parameters);
  const auto stored_hash = nn::parameter_hash(vae.parameters());
  const bool frozen = full["vae_hash_unchanged"].get<bool>() && full["vae_hash"] == vae_summary["parameter_hash"] &&
                      stored_hash == vae_summary["parameter_hash"].get<std::uint64_t>();

  // checkpoint round trip: reload the flow model and compare a forward pass
  auto cond = pipeline::make_conditioner(ca);
  ckpt::restore(cond.parameters(), ckpt::load_checkpoint(ca.cond_checkpoint()).parameters);
  auto m1 = pipeline::make_flow_model(ca, cond);
  ckpt::restore(m1.parameters(), ckpt::load_checkpoint(ca.flow_checkpoint()).parameters);
  const auto path = a.path() / "again.ckpt";
  ckpt::Checkpoint c;
  c.parameters = ckpt::capture(m1.parameters());
  ckpt::save_checkpoint(path, c);
  auto m2 = pipeline::make_flow_model(ca, pipeline::make_conditioner(ca));
  ckpt::restore(m2.parameters(), ckpt::load_checkpoint(path).parameters);
  const auto x = randn<float>({1, 10, 2 * ca.vae.latent_dim}, 1101);
  const auto f = randn<float>({1, 10, ca.conditioner.feature_dim()}, 1102);
  auto off = Tape<float>::suspend();
  const auto y1 = m1.dit.forward(x, m1.conditioner.forward(f, false), 0.4);
  const auto y2 = m2.dit.forward(x, m2.conditioner.forward(f, false), 0.4);
  const bool round_trip = std::memcmp(y1.data().data(), y2.data().data(), y1.numel() * sizeof(float)) == 0;
  return {resume_ok && frozen && round_trip, std::string("vae hash ") + (frozen ? "unchanged" : "CHANGED") +
                                                 "; checkpoint forward " + (round_trip ? "bit-exact" : "DIFFERS") +
                                                 "; 50+50 resume " + (resume_ok ? "equals" : "DIFFERS FROM") +
                                                 " 100 uninterrupted steps"};
}

// ---- 12: full-size shapes ---------------------------------------------------

Outcome full_shapes() {
  const auto cfg = MmDitConfig::full();
  MmDit<float> model(cfg, Rng(1201));
  const std::int64_t lat = cfg.max_latent_frames(), con = cfg.max_cond_frames();
  auto off = Tape<float>::suspend();
  const auto x = randn<float>({1, lat, cfg.latent_features()}, 1202);
  const auto c = randn<float>({1, con, cfg.cond_dim}, 1203);
  const auto y = model.forward(x, c, 0.5);
  bool finite = true;
  for (std::int64_t i = 0; i < y.numel(); ++i) finite = finite && std::isfinite(y[i]);
  std::size_t params = 0;
  for (const auto& p : model.parameters()) params += static_cast<std::size_t>(p.tensor.numel());
  return {y.shape() == x.shape() && finite, "x " + shape_str(x.shape()) + " + cond " + shape_str(c.shape()) + " -> " +
                                                shape_str(y.shape()) + ", " + fmt(params / 1e6, 4) + "M parameters"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geneses acceptance suite"};
  std::vector<int> only;
  RunOptions run;
  std::string work_root;
  app.add_option("--criteria", only, "run only these criteria (default: all)")->delimiter(',');
  app.add_option("--config", run.config, "experiment config for criteria 4 and 5 (default: micro preset)");
  app.add_option("--override", run.overrides, "key.path=value applied to that config");
  app.add_option("--work-dir", work_root, "keep end-to-end runs here instead of a temp dir");
  app.add_flag("--verbose", run.verbose, "progress lines for the end-to-end runs");
  CLI11_PARSE(app, argc, argv);

  std::optional<testing::TempDir> temp;
  if (work_root.empty()) {
    temp.emplace();
    run.work_root = temp->path();
  } else {
    run.work_root = work_root;
  }

  const std::vector<Criterion> all = {
      {1, "autodiff gradient checks", 30, autodiff},
      {2, "Euler integrator first order", 1, integrator_order},
      {3, "flow matching recovers a 2-D mixture", 300, distribution_recovery},
      {4, "PIT-free toy separation", 1800, [&] { return toy_separation(run); }},
      {5, "robustness under the complex chain", 1800, [&] { return complex_robustness(run); }},
      {6, "SNR mixer accuracy", 60, mixer_accuracy},
      {7, "degradation determinism and replay", 120, degradation_determinism},
      {8, "LoRA contracts", 60, lora_contracts},
      {9, "logit-normal timestep sampler", 10, logit_normal},
      {10, "metric identities", 30, metric_identities},
      {11, "frozen VAE, checkpoint and resume", 300, frozen_and_resume},
      {12, "full-size MM-DiT shapes", 60, full_shapes},
  };

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_seconds;
    const bool pass = o.pass && in_time;
    if (!pass) ++failed;
    std::cout << (pass ? "PASS" : "FAIL") << "  [" << c.id << "] " << c.name << ": " << o.detail << " ("
              << fmt(secs, 3) << " s of " << c.budget_seconds << " s" << (in_time ? "" : ", OVER BUDGET") << ")"
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
