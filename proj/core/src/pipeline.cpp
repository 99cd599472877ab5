// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#include "geneses/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "geneses/error.hpp"

namespace geneses::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- config ------------------------------------------------------------------

namespace {

json mmdit_json(const MmDitConfig& c) {
  return {{"n_layers", c.n_layers},
          {"model_dim", c.model_dim},
          {"n_heads", c.n_heads},
          {"latent_dim_per_speaker", c.latent_dim_per_speaker},
          {"n_speakers", c.n_speakers},
          {"cond_dim", c.cond_dim},
          {"timestep_embed_dim", c.timestep_embed_dim},
          {"mlp_ratio", c.mlp_ratio},
          {"max_sequence_seconds", c.max_sequence_seconds},
          {"latent_frame_rate", c.latent_frame_rate},
          {"cond_frame_rate", c.cond_frame_rate},
          {"positional", c.positional}};
}

MmDitConfig mmdit_from(const json& j) {
  MmDitConfig c;
  c.n_layers = j.at("n_layers");
  c.model_dim = j.at("model_dim");
  c.n_heads = j.at("n_heads");
  c.latent_dim_per_speaker = j.at("latent_dim_per_speaker");
  c.n_speakers = j.at("n_speakers");
  c.cond_dim = j.at("cond_dim");
  c.timestep_embed_dim = j.at("timestep_embed_dim");
  c.mlp_ratio = j.at("mlp_ratio");
  c.max_sequence_seconds = j.at("max_sequence_seconds");
  c.latent_frame_rate = j.at("latent_frame_rate");
  c.cond_frame_rate = j.at("cond_frame_rate");
  c.positional = j.at("positional");
  return c;
}

json vae_train_json(const codec::VaeTrainConfig& c) {
  json res = json::array();
  for (const auto& r : c.loss.resolutions) res.push_back({r.window, r.hop});
  return {{"steps", c.steps},
          {"batch", c.batch},
          {"crop", c.crop},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"spectral_weight", c.loss.spectral_weight},
          {"waveform_weight", c.loss.waveform_weight},
          {"log_floor", c.loss.log_floor},
          {"resolutions", res}};
}

codec::VaeTrainConfig vae_train_from(const json& j) {
  codec::VaeTrainConfig c;
  c.steps = j.at("steps");
  c.batch = j.at("batch");
  c.crop = j.at("crop");
  c.lr = j.at("lr");
  c.weight_decay = j.at("weight_decay");
  c.loss.spectral_weight = j.at("spectral_weight");
  c.loss.waveform_weight = j.at("waveform_weight");
  c.loss.log_floor = j.at("log_floor");
  c.loss.resolutions.clear();
  for (const auto& r : j.at("resolutions")) {
    require(r.is_array() && r.size() == 2, Errc::config, "resolutions entries are [window, hop]");
    c.loss.resolutions.push_back({r[0].get<int>(), r[1].get<int>()});
  }
  return c;
}

json data_json(const DataSection& d) {
  return {{"train", d.train},
          {"test", d.test},
          {"regime", degrade::regime_name(d.regime)},
          {"duration", d.duration},
          {"min_fraction", d.min_fraction},
          {"chain", d.chain ? json(*d.chain) : json(nullptr)},
          {"speech",
           {{"n_speakers", d.speech.n_speakers},
            {"f0_low", d.speech.f0_low},
            {"f0_high", d.speech.f0_high},
            {"max_harmonic_hz", d.speech.max_harmonic_hz},
            {"seed", d.speech.seed}}},
          {"speech_root", d.speech_root}};
}

DataSection data_from(const json& j) {
  DataSection d;
  d.train = j.at("train");
  d.test = j.at("test");
  d.regime = degrade::regime_from_name(j.at("regime").get<std::string>());
  d.duration = j.at("duration");
  d.min_fraction = j.at("min_fraction");
  if (!j.at("chain").is_null()) d.chain = j.at("chain").get<degrade::ChainConfig>();
  const auto& s = j.at("speech");
  d.speech.n_speakers = s.at("n_speakers");
  d.speech.f0_low = s.at("f0_low");
  d.speech.f0_high = s.at("f0_high");
  d.speech.max_harmonic_hz = s.at("max_harmonic_hz");
  d.speech.seed = s.at("seed");
  d.speech_root = j.at("speech_root");
  return d;
}

json flow_json(const FlowSection& f) {
  return {{"steps", f.steps},
          {"batch", f.batch},
          {"lr", f.lr},
          {"weight_decay", f.weight_decay},
          {"checkpoint_every", f.checkpoint_every},
          {"log_every", f.log_every},
          {"step_size", f.step_size}};
}

FlowSection flow_from(const json& j) {
  FlowSection f;
  f.steps = j.at("steps");
  f.batch = j.at("batch");
  f.lr = j.at("lr");
  f.weight_decay = j.at("weight_decay");
  f.checkpoint_every = j.at("checkpoint_every");
  f.log_every = j.at("log_every");
  f.step_size = j.at("step_size");
  return f;
}

// Every key of `user` must exist in `known`; objects recurse. A null in
// `known` accepts any value (validated by the section parser).
void check_keys(const json& user, const json& known, const std::string& path) {
  if (!user.is_object() || !known.is_object()) return;
  for (const auto& [key, value] : user.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    require(known.contains(key), Errc::config, here + ": unknown config key");
    check_keys(value, known.at(key), here);
  }
}

template <typename F>
auto section(const std::string& path, F&& parse) {
  try {
    return parse();
  } catch (const Error& e) {
    fail(Errc::config, path + ": " + e.what());
  } catch (const json::exception& e) {
    fail(Errc::config, path + ": " + e.what());
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::micro() {
  ExperimentConfig c;
  c.name = "micro";
  c.work_dir = "runs/micro";
  c.data = DataSection{};
  c.vae = codec::VaeConfig::micro();
  c.vae_train.steps = 600;
  c.vae_train.loss.spectral_weight = 0.0;
  c.conditioner = cond::ConditionerConfig::micro();
  c.pretrain.steps = 300;
  c.mmdit.n_layers = 4;
  c.mmdit.model_dim = 128;
  c.mmdit.n_heads = 4;
  c.mmdit.latent_dim_per_speaker = c.vae.latent_dim;
  c.mmdit.cond_dim = c.conditioner.cond_dim;
  c.mmdit.mlp_ratio = 2;
  c.mmdit.max_sequence_seconds = 1.0;
  c.mmdit.latent_frame_rate = c.vae.frame_rate();
  c.mmdit.cond_frame_rate = c.conditioner.frame_rate();
  c.flow = FlowSection{};
  return c;
}

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.name = "desk";
  c.work_dir = "runs/desk";
  c.data.duration = 1.0;
  c.vae = codec::VaeConfig::desk();
  c.vae_train.crop = 16 * static_cast<std::size_t>(c.vae.stride());
  c.conditioner = cond::ConditionerConfig::desk();
  c.mmdit = MmDitConfig::desk();
  c.mmdit.latent_frame_rate = c.vae.frame_rate();
  c.mmdit.cond_frame_rate = c.conditioner.frame_rate();
  c.mmdit.max_sequence_seconds = 2.0;
  return c;
}

ExperimentConfig ExperimentConfig::full() {
  ExperimentConfig c;
  c.name = "full";
  c.work_dir = "runs/full";
  c.data.train = degrade::SplitSizes::full().train;
  c.data.test = degrade::SplitSizes::full().test;
  c.data.regime = degrade::Regime::complex;
  c.data.duration = 10.0;
  c.vae = codec::VaeConfig::full();
  c.vae_train.crop = 8 * static_cast<std::size_t>(c.vae.stride());
  c.conditioner = cond::ConditionerConfig::full();
  c.mmdit = MmDitConfig::full();
  c.flow.steps = 150000;
  c.flow.batch = 16;
  c.flow.lr = 1e-5;
  c.flow.checkpoint_every = 5000;
  return c;
}

ExperimentConfig ExperimentConfig::preset(const std::string& name) {
  if (name == "micro") return micro();
  if (name == "desk") return desk();
  if (name == "full") return full();
  fail(Errc::config, "name: unknown preset '" + name + "' (micro, desk, full)");
}

void ExperimentConfig::validate() const {
  require(precision == "float32", Errc::config, "precision: only float32 training is supported");
  require(!work_dir.empty(), Errc::config, "work_dir: must not be empty");
  section("data", [&] {
    require(data.train > 0 && data.test > 0, Errc::config, "train and test sizes must be positive");
    require(data.duration > 0.0, Errc::config, "duration must be positive");
    require(data.min_fraction > 0.0 && data.min_fraction <= 1.0, Errc::config, "min_fraction must be in (0, 1]");
    if (data.chain) data.chain->validate();
    return 0;
  });
  section("vae", [&] { vae.validate(); return 0; });
  section("vae_train", [&] {
    require(vae_train.steps >= 0 && vae_train.batch > 0, Errc::config, "bad steps or batch");
    require(vae_train.crop > 0 && vae_train.crop % static_cast<std::size_t>(vae.stride()) == 0, Errc::config,
            "crop must be a positive multiple of the vae stride");
    return 0;
  });
  section("conditioner", [&] { conditioner.validate(); return 0; });
  section("pretrain", [&] {
    require(pretrain.steps >= 0 && pretrain.batch > 0, Errc::config, "bad steps or batch");
    require(pretrain.mask_prob > 0.0 && pretrain.mask_prob < 1.0, Errc::config, "mask_prob must be in (0, 1)");
    return 0;
  });
  section("mmdit", [&] {
    mmdit.validate();
    require(mmdit.n_speakers == 2, Errc::config, "n_speakers must be 2");
    require(mmdit.latent_dim_per_speaker == vae.latent_dim, Errc::config,
            "latent_dim_per_speaker must equal vae.latent_dim");
    require(mmdit.cond_dim == conditioner.cond_dim, Errc::config, "cond_dim must equal conditioner.cond_dim");
    require(std::abs(mmdit.latent_frame_rate - vae.frame_rate()) < 1e-9, Errc::config,
            "latent_frame_rate must equal the vae frame rate " + std::to_string(vae.frame_rate()));
    require(std::abs(mmdit.cond_frame_rate - conditioner.frame_rate()) < 1e-9, Errc::config,
            "cond_frame_rate must equal the conditioner frame rate " + std::to_string(conditioner.frame_rate()));
    require(data.duration <= mmdit.max_sequence_seconds, Errc::config,
            "max_sequence_seconds is shorter than data.duration");
    return 0;
  });
  section("flow", [&] {
    require(flow.steps >= 0 && flow.batch > 0 && flow.lr > 0.0, Errc::config, "bad steps, batch or lr");
    require(flow.checkpoint_every >= 0 && flow.log_every >= 0, Errc::config, "cadences must be non-negative");
    (void)flow::SamplerConfig{flow.step_size}.steps();
    return 0;
  });
  section("metrics", [&] {
    require(metrics.n_cepstra >= 1 && metrics.n_cepstra < metrics.n_mels, Errc::config,
            "need 1 <= n_cepstra < n_mels");
    require(metrics.window > 0 && (metrics.window & (metrics.window - 1)) == 0 && metrics.hop > 0 &&
                metrics.window % metrics.hop == 0,
            Errc::config, "window must be a power of two divisible by hop");
    return 0;
  });
}

json to_json(const ExperimentConfig& c) {
  return {{"name", c.name},
          {"precision", c.precision},
          {"work_dir", c.work_dir},
          {"seed", c.seed},
          {"data", data_json(c.data)},
          {"vae", json(c.vae)},
          {"vae_train", vae_train_json(c.vae_train)},
          {"conditioner", json(c.conditioner)},
          {"pretrain",
           {{"steps", c.pretrain.steps},
            {"batch", c.pretrain.batch},
            {"mask_prob", c.pretrain.mask_prob},
            {"lr", c.pretrain.lr}}},
          {"mmdit", mmdit_json(c.mmdit)},
          {"flow", flow_json(c.flow)},
          {"metrics",
           {{"window", c.metrics.window},
            {"hop", c.metrics.hop},
            {"n_mels", c.metrics.n_mels},
            {"n_cepstra", c.metrics.n_cepstra}}}};
}

ExperimentConfig config_from_json(const json& j) {
  require(j.is_object(), Errc::config, "config must be a JSON object");
  const std::string name = j.contains("name") ? section("name", [&] { return j.at("name").get<std::string>(); })
                                              : std::string("micro");
  json doc = to_json(ExperimentConfig::preset(name));
  check_keys(j, doc, "");
  if (j.contains("data") && j["data"].contains("chain") && j["data"]["chain"].is_object())
    check_keys(j["data"]["chain"], json(degrade::ChainConfig::complex()), "data.chain");
  doc.merge_patch(j);
  // merge_patch drops null members; chain null means "regime default"
  if (!doc["data"].contains("chain")) doc["data"]["chain"] = nullptr;

  ExperimentConfig c;
  c.name = section("name", [&] { return doc.at("name").get<std::string>(); });
  c.precision = section("precision", [&] { return doc.at("precision").get<std::string>(); });
  c.work_dir = section("work_dir", [&] { return doc.at("work_dir").get<std::string>(); });
  c.seed = section("seed", [&] { return doc.at("seed").get<std::uint64_t>(); });
  c.data = section("data", [&] { return data_from(doc.at("data")); });
  c.vae = section("vae", [&] { return doc.at("vae").get<codec::VaeConfig>(); });
  c.vae_train = section("vae_train", [&] { return vae_train_from(doc.at("vae_train")); });
  c.conditioner = section("conditioner", [&] { return doc.at("conditioner").get<cond::ConditionerConfig>(); });
  c.pretrain = section("pretrain", [&] {
    const auto& p = doc.at("pretrain");
    cond::PretrainConfig out;
    out.steps = p.at("steps");
    out.batch = p.at("batch");
    out.mask_prob = p.at("mask_prob");
    out.lr = p.at("lr");
    return out;
  });
  c.mmdit = section("mmdit", [&] { return mmdit_from(doc.at("mmdit")); });
  c.flow = section("flow", [&] { return flow_from(doc.at("flow")); });
  c.metrics = section("metrics", [&] {
    const auto& m = doc.at("metrics");
    metrics::SpectralConfig out;
    out.window = m.at("window");
    out.hop = m.at("hop");
    out.n_mels = m.at("n_mels");
    out.n_cepstra = m.at("n_cepstra");
    return out;
  });
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), Errc::config, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(Errc::config, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, Errc::config, "override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    require(!part.empty(), Errc::config, "override key '" + key + "' has an empty component");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

// ---- data --------------------------------------------------------------------

std::unique_ptr<degrade::SpeechSource> make_source(const ExperimentConfig& cfg) {
  if (!cfg.data.speech_root.empty()) return std::make_unique<degrade::WavCorpus>(cfg.data.speech_root);
  return std::make_unique<degrade::SyntheticSpeakers>(cfg.data.speech);
}

degrade::DatasetConfig dataset_config(const ExperimentConfig& cfg, const std::string& split) {
  require(split == "train" || split == "test", Errc::config, "unknown split '" + split + "' (train, test)");
  degrade::DatasetConfig d;
  d.n_samples = split == "train" ? cfg.data.train : cfg.data.test;
  d.regime = cfg.data.regime;
  // disjoint sample streams per split
  d.seed = Rng(cfg.seed).split(split == "train" ? 1 : 2).key();
  d.sample_rate = cfg.vae.sample_rate;
  d.duration = cfg.data.duration;
  d.min_fraction = cfg.data.min_fraction;
  d.chain = cfg.data.chain;
  return d;
}

std::vector<Example> load_split(const ExperimentConfig& cfg, const std::string& split) {
  const auto dc = dataset_config(cfg, split);
  const fs::path root = cfg.data_dir() / split;
  require(fs::exists(root / "manifest.jsonl"), Errc::data,
          "no dataset at " + root.string() + "; run gen-data first");
  const auto stride = static_cast<std::size_t>(cfg.vae.stride());
  const std::size_t padded = (dc.max_samples() + stride - 1) / stride * stride;
  std::vector<Example> out;
  for (const auto& entry : degrade::read_manifest(root)) {
    auto s = degrade::load_sample(root, entry);
    require(s.degraded.sample_rate == cfg.vae.sample_rate, Errc::data,
            entry.id + ": sample rate " + std::to_string(s.degraded.sample_rate) + " does not match the vae");
    require(s.degraded.size() <= padded, Errc::data, entry.id + ": longer than data.duration");
    Example e;
    e.id = entry.id;
    e.length = s.degraded.size();
    for (auto* b : {&s.clean_a, &s.clean_b, &s.degraded}) b->samples.resize(padded, 0.0f);
    e.clean_a = std::move(s.clean_a);
    e.clean_b = std::move(s.clean_b);
    e.degraded = std::move(s.degraded);
    out.push_back(std::move(e));
  }
  require(!out.empty(), Errc::data, "empty dataset at " + root.string());
  return out;
}

// ---- models ------------------------------------------------------------------

namespace {

// fixed stream ids under the config seed
enum Stream : std::uint64_t {
  kVaeInit = 10,
  kVaeTrain,
  kCondInit,
  kCondPretrain,
  kLora,
  kDitInit,
  kFlowTrain,
  kInferNoise,
};

Rng stream(const ExperimentConfig& cfg, Stream s) { return Rng(cfg.seed).split(s); }

AudioBuffer to_rate(const AudioBuffer& b, int rate) { return b.sample_rate == rate ? b : audio::resample(b, rate); }

Tensor<float> batch1(const Tensor<float>& t) { return reshape(t, {1, t.dim(0), t.dim(1)}); }

// trunk weights without the adapters
std::uint64_t base_trunk_hash(const cond::Conditioner& c) {
  nn::ParameterList<float> base;
  for (const auto& p : c.trunk_parameters())
    if (p.name.find(".lora_") == std::string::npos) base.push_back(p);
  return nn::parameter_hash(base);
}

}  // namespace

nn::ParameterList<float> FlowModel::parameters() const {
  auto out = conditioner.parameters();
  for (auto& p : dit.parameters()) out.push_back(p);
  return out;
}

codec::Vae make_vae(const ExperimentConfig& cfg) {
  return codec::Vae(cfg.vae, stream(cfg, kVaeInit));
}

cond::Conditioner make_conditioner(const ExperimentConfig& cfg) {
  return cond::Conditioner(cfg.conditioner, stream(cfg, kCondInit));
}

FlowModel make_flow_model(const ExperimentConfig& cfg, const cond::Conditioner& pretrained) {
  FlowModel m{make_conditioner(cfg), MmDit<float>(cfg.mmdit, stream(cfg, kDitInit))};
  ckpt::restore(m.conditioner.parameters(), ckpt::capture(pretrained.parameters()));
  m.conditioner.attach_lora(stream(cfg, kLora));
  m.conditioner.set_trunk_frozen(cfg.conditioner.trunk_frozen);
  return m;
}

FlowData prepare_flow_data(const codec::Vae& vae, const cond::Conditioner& conditioner,
                           const std::vector<Example>& examples) {
  auto off = Tape<float>::suspend();
  FlowData d;
  for (const auto& e : examples) {
    const auto a = vae.normalize(batch1(vae.encode_mean(e.clean_a).features));
    const auto b = vae.normalize(batch1(vae.encode_mean(e.clean_b).features));
    d.targets.push_back(concat(std::vector<Tensor<float>>{a, b}, 2));
    d.features.push_back(batch1(conditioner.features(to_rate(e.degraded, conditioner.config().sample_rate))));
  }
  return d;
}

FlowTrainer::FlowTrainer(const ExperimentConfig& cfg, FlowModel& model, const FlowData& data)
    : cfg_(cfg),
      model_(model),
      data_(data),
      optimizer_(nn::trainable(model.parameters()),
                 nn::AdamWConfig{cfg.flow.lr, 0.9, 0.999, 1e-8, cfg.flow.weight_decay}),
      root_(stream(cfg, kFlowTrain)) {
  require(!data.targets.empty() && data.targets.size() == data.features.size(), Errc::contract,
          "flow training needs matching, non-empty targets and features");
  ctx_.predictor = flow::predictor_of(model_.dit);
  ctx_.condition = [this](const Tensor<float>& feats, bool training, Rng rng) {
    return model_.conditioner.forward(feats, training, rng);
  };
  ctx_.optimizer = &optimizer_;
  ctx_.schedule = nn::LrSchedule::standard(cfg.flow.lr, cfg.flow.steps);
}

flow::StepReport FlowTrainer::step() {
  Rng rng = root_.split(static_cast<std::uint64_t>(optimizer_.step_count()));
  std::vector<Tensor<float>> xs, cs;
  for (int b = 0; b < cfg_.flow.batch; ++b) {
    const auto k = static_cast<std::size_t>(rng.below(data_.targets.size()));
    xs.push_back(data_.targets[k]);
    cs.push_back(data_.features[k]);
  }
  return flow::train_step(ctx_, concat(cs, 0), concat(xs, 0), rng.split(1));
}

ckpt::Checkpoint FlowTrainer::checkpoint(const json& meta) const {
  ckpt::Checkpoint c;
  c.meta = meta;
  c.parameters = ckpt::capture(model_.parameters());
  c.optimizer = ckpt::capture_optimizer(const_cast<nn::AdamW<float>&>(optimizer_));
  c.step = optimizer_.step_count();
  c.rng = root_;
  return c;
}

void FlowTrainer::resume(const ckpt::Checkpoint& c) {
  ckpt::restore(model_.parameters(), c.parameters);
  ckpt::restore_optimizer(optimizer_, c.optimizer, c.step);
  require(c.rng.key() == root_.key(), Errc::checkpoint_corrupt, "flow checkpoint was written under another seed");
  root_ = c.rng;
}

std::pair<AudioBuffer, AudioBuffer> separate(const codec::Vae& vae, const FlowModel& model, const AudioBuffer& degraded,
                                             double step_size, Rng noise) {
  require(!degraded.empty(), Errc::contract, "infer: empty input");
  auto off = Tape<float>::suspend();
  const auto feats = model.conditioner.features(to_rate(degraded, model.conditioner.config().sample_rate));
  const auto cond = model.conditioner.forward(batch1(feats), false);
  const auto c = reshape(cond, {cond.dim(1), cond.dim(2)});
  const std::int64_t stride = vae.config().stride();
  const std::int64_t frames = (static_cast<std::int64_t>(degraded.size()) + stride - 1) / stride;
  const std::int64_t d = vae.config().latent_dim;
  std::vector<float> x0(static_cast<std::size_t>(frames * 2 * d));
  for (auto& v : x0) v = static_cast<float>(noise.normal());
  const auto x = flow::euler_sample(model.dit, c, Tensor<float>({frames, 2 * d}, std::move(x0)), step_size);
  const auto parts = split(x, 1, std::vector<std::int64_t>{d, d});
  auto decode = [&](const Tensor<float>& z) {
    const auto raw = vae.denormalize(batch1(z));
    return vae.decode_track(codec::LatentTrack{reshape(raw, {frames, d}), vae.config().frame_rate()},
                            degraded.size());
  };
  return {decode(parts[0]), decode(parts[1])};
}

// ---- commands ----------------------------------------------------------------

namespace {

void say(const Log& log, const std::string& s) {
  if (log) log(s);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json meta(const ExperimentConfig& cfg, const std::string& stage) { return {{"stage", stage}, {"config", to_json(cfg)}}; }

ckpt::Checkpoint load_stage(const fs::path& path, const std::string& stage, const std::string& producer) {
  if (!fs::exists(path))
    fail(Errc::checkpoint_missing, "missing " + path.string() + "; run `geneses " + producer + "` first");
  auto c = ckpt::load_checkpoint(path);
  require(c.meta.value("stage", "") == stage, Errc::checkpoint_corrupt,
          path.string() + " is not a " + stage + " checkpoint");
  return c;
}

codec::Vae load_vae(const ExperimentConfig& cfg) {
  auto vae = make_vae(cfg);
  ckpt::restore(vae.parameters(), load_stage(cfg.vae_checkpoint(), "vae", "train-vae").parameters);
  return vae;
}

cond::Conditioner load_conditioner(const ExperimentConfig& cfg) {
  auto c = make_conditioner(cfg);
  if (!cfg.conditioner.pretrain && !fs::exists(cfg.cond_checkpoint())) return c;
  ckpt::restore(c.parameters(), load_stage(cfg.cond_checkpoint(), "conditioner", "pretrain-cond").parameters);
  return c;
}

FlowModel load_flow_model(const ExperimentConfig& cfg) {
  auto model = make_flow_model(cfg, load_conditioner(cfg));
  const auto c = load_stage(cfg.flow_checkpoint(), "flow", "train-flow");
  ckpt::restore(model.parameters(), c.parameters);
  return model;
}

std::vector<AudioBuffer> clean_tracks(const std::vector<Example>& examples) {
  std::vector<AudioBuffer> out;
  for (const auto& e : examples) {
    out.push_back(e.clean_a);
    out.push_back(e.clean_b);
  }
  return out;
}

}  // namespace

json cmd_gen_data(const ExperimentConfig& cfg, const Log& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto source = make_source(cfg);
  json out{{"command", "gen-data"}, {"data_dir", cfg.data_dir().string()}};
  for (const std::string split : {"train", "test"}) {
    const auto entries = degrade::build_dataset(*source, dataset_config(cfg, split), cfg.data_dir() / split);
    out[split] = entries.size();
    say(log, split + ": " + std::to_string(entries.size()) + " mixtures");
  }
  out["seconds"] = seconds_since(t0);
  return out;
}

json cmd_train_vae(const ExperimentConfig& cfg, const Log& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto corpus = clean_tracks(load_split(cfg, "train"));
  auto vae = make_vae(cfg);
  auto tc = cfg.vae_train;
  tc.seed = stream(cfg, kVaeTrain).key();
  const auto losses = codec::train_vae(vae, corpus, tc, [&](int step, double loss) {
    if (cfg.flow.log_every > 0 && (step + 1) % cfg.flow.log_every == 0)
      say(log, "vae step " + std::to_string(step + 1) + " loss " + std::to_string(loss));
  });
  codec::fit_normalisation(vae, corpus);
  const auto raw = codec::latent_statistics(vae, corpus);

  double snr = 0.0;
  const auto test = load_split(cfg, "test");
  for (const auto& e : test) {
    for (const auto* ref : {&e.clean_a, &e.clean_b}) {
      const auto y = vae.decode_track(vae.encode_mean(*ref), ref->size());
      snr += audio::snr_db(ref->samples, y.samples);
    }
  }
  snr /= static_cast<double>(2 * test.size());

  ckpt::Checkpoint c;
  c.meta = meta(cfg, "vae");
  c.parameters = ckpt::capture(vae.parameters());
  c.step = tc.steps;
  ckpt::save_checkpoint(cfg.vae_checkpoint(), c);
  say(log, "vae held-out SNR " + std::to_string(snr) + " dB");
  return {{"command", "train-vae"},
          {"checkpoint", cfg.vae_checkpoint().string()},
          {"steps", tc.steps},
          {"final_loss", losses.empty() ? json(nullptr) : json(losses.back())},
          {"test_snr_db", snr},
          {"raw_latent_mean", raw.mean},
          {"raw_latent_std", raw.stddev},
          {"parameter_hash", nn::parameter_hash(vae.parameters())},
          {"seconds", seconds_since(t0)}};
}

json cmd_pretrain_cond(const ExperimentConfig& cfg, const Log& log) {
  const auto t0 = std::chrono::steady_clock::now();
  auto conditioner = make_conditioner(cfg);
  json out{{"command", "pretrain-cond"}, {"checkpoint", cfg.cond_checkpoint().string()}};
  if (cfg.conditioner.pretrain) {
    auto corpus = clean_tracks(load_split(cfg, "train"));
    for (auto& b : corpus) b = to_rate(b, cfg.conditioner.sample_rate);
    auto pc = cfg.pretrain;
    pc.seed = stream(cfg, kCondPretrain).key();
    const auto losses = cond::pretrain_conditioner(conditioner, corpus, pc, [&](int step, double loss) {
      if (cfg.flow.log_every > 0 && (step + 1) % cfg.flow.log_every == 0)
        say(log, "pretrain step " + std::to_string(step + 1) + " loss " + std::to_string(loss));
    });
    out["first_loss"] = losses.empty() ? json(nullptr) : json(losses.front());
    out["final_loss"] = losses.empty() ? json(nullptr) : json(losses.back());
  } else {
    say(log, "pretraining disabled; storing the random trunk");
  }
  ckpt::Checkpoint c;
  c.meta = meta(cfg, "conditioner");
  c.parameters = ckpt::capture(conditioner.parameters());
  ckpt::save_checkpoint(cfg.cond_checkpoint(), c);
  out["parameter_hash"] = nn::parameter_hash(conditioner.parameters());
  out["seconds"] = seconds_since(t0);
  return out;
}

json cmd_train_flow(const ExperimentConfig& cfg, const Log& log, int stop_after) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto vae = load_vae(cfg);
  const auto vae_hash = nn::parameter_hash(vae.parameters());
  auto model = make_flow_model(cfg, load_conditioner(cfg));
  const auto trunk_hash = base_trunk_hash(model.conditioner);
  const auto data = prepare_flow_data(vae, model.conditioner, load_split(cfg, "train"));
  FlowTrainer trainer(cfg, model, data);

  bool resumed = false;
  if (fs::exists(cfg.flow_checkpoint())) {
    trainer.resume(load_stage(cfg.flow_checkpoint(), "flow", "train-flow"));
    resumed = true;
    say(log, "resumed at step " + std::to_string(trainer.steps_done()));
  }
  const std::int64_t target = stop_after > 0 ? std::min<std::int64_t>(stop_after, cfg.flow.steps) : cfg.flow.steps;
  auto save = [&] { ckpt::save_checkpoint(cfg.flow_checkpoint(), trainer.checkpoint(meta(cfg, "flow"))); };
  double recent = 0.0;
  int count = 0;
  double last = std::nan("");
  while (trainer.steps_done() < target) {
    const auto rep = trainer.step();
    last = rep.loss;
    recent += rep.loss;
    ++count;
    const auto k = trainer.steps_done();
    if (cfg.flow.log_every > 0 && k % cfg.flow.log_every == 0) {
      say(log, "flow step " + std::to_string(k) + " loss " + std::to_string(recent / count));
      recent = 0.0;
      count = 0;
    }
    if (cfg.flow.checkpoint_every > 0 && k % cfg.flow.checkpoint_every == 0) save();
  }
  save();
  require(nn::parameter_hash(vae.parameters()) == vae_hash, Errc::contract, "vae parameters changed during train-flow");
  const bool trunk_stable = base_trunk_hash(model.conditioner) == trunk_hash;
  return {{"command", "train-flow"},
          {"checkpoint", cfg.flow_checkpoint().string()},
          {"resumed", resumed},
          {"steps_done", trainer.steps_done()},
          {"final_loss", std::isnan(last) ? json(nullptr) : json(last)},
          {"vae_hash", vae_hash},
          {"vae_hash_unchanged", true},
          {"trunk_base_unchanged", trunk_stable},
          {"parameter_hash", nn::parameter_hash(model.parameters())},
          {"seconds", seconds_since(t0)}};
}

json cmd_infer(const ExperimentConfig& cfg, const std::string& input, const fs::path& out, const Log& log) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::pair<std::string, AudioBuffer>> jobs;
  if (input == "train" || input == "test") {
    for (auto& e : load_split(cfg, input)) {
      e.degraded.samples.resize(e.length);
      jobs.emplace_back(e.id, std::move(e.degraded));
    }
  } else {
    auto buf = audio::read_wav(input);
    require(!buf.empty(), Errc::contract, "infer: empty input " + input);
    jobs.emplace_back(fs::path(input).stem().string(), to_rate(buf, cfg.vae.sample_rate));
  }
  const auto vae = load_vae(cfg);
  const auto model = load_flow_model(cfg);
  fs::create_directories(out);
  const Rng noise = stream(cfg, kInferNoise);
  json files = json::array();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& [id, audio_in] = jobs[i];
    const auto [s1, s2] = separate(vae, model, audio_in, cfg.flow.step_size, noise.split(i));
    audio::write_wav(out / (id + ".spk1.wav"), s1);
    audio::write_wav(out / (id + ".spk2.wav"), s2);
    files.push_back(id);
  }
  say(log, "separated " + std::to_string(jobs.size()) + " inputs into " + out.string());
  return {{"command", "infer"}, {"out_dir", out.string()}, {"ids", files}, {"seconds", seconds_since(t0)}};
}

json cmd_eval(const ExperimentConfig& cfg, const std::string& split, const fs::path& estimates, const fs::path& out,
              const Log& log) {
  const fs::path root = cfg.data_dir() / split;
  require(fs::exists(root / "manifest.jsonl"), Errc::data, "no dataset at " + root.string() + "; run gen-data first");
  std::vector<metrics::PairReport> reports;
  for (const auto& entry : degrade::read_manifest(root)) {
    const auto s = degrade::load_sample(root, entry);
    auto read = [&](const std::string& suffix) {
      const auto p = estimates / (entry.id + suffix);
      require(fs::exists(p), Errc::data, "missing estimate " + p.string() + "; run infer first");
      auto b = audio::read_wav(p);
      require(b.size() == s.degraded.size(), Errc::data, p.string() + ": length differs from the reference");
      return b;
    };
    auto r = metrics::evaluate_pair(s.clean_a, s.clean_b, read(".spk1.wav"), read(".spk2.wav"), cfg.metrics);
    r.id = entry.id;
    metrics::score_input(r, s.clean_a, s.clean_b, s.degraded, cfg.metrics);
    reports.push_back(std::move(r));
  }
  metrics::write_report(out, reports);
  const auto summary = metrics::summarize(reports);
  say(log, metrics::summary_table(summary));
  auto j = metrics::to_json(summary);
  j["command"] = "eval";
  j["report"] = (out / "report.jsonl").string();
  return j;
}

}  // namespace geneses::pipeline
