// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "lmoe/bench/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "lmoe/core/error.hpp"
#include "lmoe/diffusion/ddim.hpp"
#include "lmoe/famo/modulator.hpp"

namespace lmoe::bench {
namespace {

using nlohmann::json;

struct Batch {
  ObservationBatch obs;
  Tensor noisy, eps;
  std::vector<std::size_t> steps;
};

Batch make_batch(const Policy& policy, const std::vector<TrainingExample>& ex,
                 const std::vector<std::size_t>& picks, Rng& rng) {
  const std::size_t B = picks.size(), L = policy.config().horizon, d = world::kActionDim;
  const std::size_t dt = policy.config().d_tok;
  Batch b;
  b.obs.tokens = Tensor({B * encoder::kPatchTokens, dt});
  b.obs.proprio = Tensor({B, world::kProprioDim});
  b.noisy = Tensor({B * L, d});
  b.eps = Tensor({B * L, d});
  for (std::size_t i = 0; i < B; ++i) {
    const TrainingExample& e = ex[picks[i]];
    std::copy_n(e.tokens.data(), e.tokens.numel(), b.obs.tokens.data() + i * e.tokens.numel());
    std::copy_n(e.proprio.data(), world::kProprioDim, b.obs.proprio.data() + i * world::kProprioDim);
    b.obs.instructions.push_back(e.instruction);
    const std::size_t k = rng.uniform_int(1, policy.config().diffusion_steps);
    b.steps.push_back(k);
    Tensor eps = rng.normal({L, d});
    const Tensor noisy = diffusion::add_noise(e.chunk, eps, k, policy.schedule());
    std::copy_n(eps.data(), L * d, b.eps.data() + i * L * d);
    std::copy_n(noisy.data(), L * d, b.noisy.data() + i * L * d);
  }
  return b;
}

std::vector<std::size_t> draw(Rng& rng, std::size_t n, std::size_t of) {
  std::vector<std::size_t> out(n);
  for (auto& x : out) x = rng.uniform_int(0, of - 1);
  return out;
}

json tensor_json(const Tensor& t) { return {{"shape", t.shape()}, {"data", t.vec()}}; }

Tensor json_tensor(const json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

}  // namespace

std::vector<TrainingExample> build_examples(const Policy& policy,
                                            const std::vector<Episode>& episodes) {
  const std::size_t L = policy.config().horizon, d = world::kActionDim;
  const auto& norm = policy.normalizer();
  std::vector<TrainingExample> out;
  for (const auto& ep : episodes) {
    const auto instr = policy.lcvr().tokenize(ep.instruction);
    const std::size_t T = ep.steps.size();
    for (std::size_t t = 0; t < T; ++t) {
      TrainingExample e;
      e.tokens = policy.lcvr().patch_tokens(ep.steps[t].image);
      e.instruction = instr;
      e.proprio = ep.steps[t].proprio;
      e.chunk = Tensor({L, d});
      for (std::size_t i = 0; i < L; ++i) {
        const Tensor& a = ep.steps[std::min(t + i, T - 1)].action;
        for (std::size_t j = 0; j < d; ++j) e.chunk[i * d + j] = norm.normalize(j, a[j]);
      }
      out.push_back(std::move(e));
    }
  }
  return out;
}

std::vector<Episode> validation_episodes(const RunConfig& cfg) {
  std::vector<Episode> out;
  for (std::size_t t = 0; t < cfg.data_tasks; ++t) {
    for (std::size_t j = 0; j < 2; ++j) {
      out.push_back(generate_demo(tasks()[t], demo_seed(cfg.data_seed + 0x5a1d, j)));
    }
  }
  return out;
}

double validation_nll(const Policy& policy, const std::vector<TrainingExample>& val,
                      std::size_t n_samples) {
  Rng rng(0x7a11da7e);
  const auto picks = draw(rng, n_samples, val.size());
  Batch b = make_batch(policy, val, picks, rng);
  Tape tape = Tape::inference();
  Var cond = policy.condition(tape, b.obs);
  return policy.training_terms(tape, cond, b.noisy, b.steps, b.eps).mixture_nll.value().item();
}

TrainResult train(Policy& policy, const std::vector<Episode>& data, const TrainOptions& opts,
                  Adam* resume_optimizer, std::size_t start_step,
                  const std::vector<Tensor>* resume_live) {
  const RunConfig& cfg = policy.config();
  if (data.empty()) throw InvalidInput("train: empty dataset");
  if (!resume_optimizer) policy.normalizer() = ActionNormalizer::fit(data);
  const auto examples = build_examples(policy, data);
  const auto val = build_examples(policy, validation_episodes(cfg));
  Adam local(cfg.lr);
  Adam& adam = resume_optimizer ? *resume_optimizer : local;
  ParameterStore& store = policy.store();
  const auto trainable = store.trainable();
  // Shadow weights; swapped in at the end of the run.
  std::vector<Tensor> shadow;
  if (cfg.ema > 0.0) {
    for (const Parameter* p : trainable) shadow.push_back(p->value);
    if (resume_live && !resume_live->empty()) {
      if (resume_live->size() != trainable.size()) {
        throw SchemaError("resume: raw weight count does not match the model");
      }
      for (std::size_t i = 0; i < trainable.size(); ++i) trainable[i]->value = (*resume_live)[i];
    }
  }

  TrainResult result;
  std::ofstream csv;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    result.metrics_csv = opts.out_dir / "metrics.csv";
    csv.open(result.metrics_csv, start_step > 0 ? std::ios::app : std::ios::trunc);
    if (!csv) throw IoError("cannot write " + result.metrics_csv.string());
    if (start_step == 0) csv << metrics_header() << '\n';
  }

  for (std::size_t s = start_step + 1; s <= cfg.steps; ++s) {
    Rng rng(mix_seed(opts.seed, s));
    const Batch b = make_batch(policy, examples, draw(rng, cfg.batch, examples.size()), rng);
    Tape tape;
    Var cond = policy.condition(tape, b.obs);
    const moe::TrainingTerms terms = policy.training_terms(tape, cond, b.noisy, b.steps, b.eps);
    const famo::ExpertLosses losses = famo::per_expert_losses(terms);
    const bool log = s == 1 || s % cfg.log_every == 0 || s == cfg.steps;

    MetricsRecord rec;
    rec.step = s;
    rec.grad_cos = std::nan("");
    if (cfg.famo) {
      const auto tel = famo::modulated_backward(tape, store, losses);
      rec.alpha = tel.alpha;
      rec.fallback = tel.fallback;
      rec.grad_cos = tel.grad_cos;
      result.fallbacks += tel.fallback ? 1 : 0;
    } else {
      if (log && terms.k == 2) {
        // Measurement only; these gradients are discarded.
        rec.grad_cos = metric_grad_cos(famo::per_expert_gradients(tape, store, losses, nullptr));
      }
      store.zero_grad();
      tape.backward(losses.mix);
    }
    if (cfg.grad_clip > 0.0) clip_grad_norm(trainable, cfg.grad_clip);
    adam.step(trainable);
    if (!shadow.empty()) {
      const double s_d = static_cast<double>(s);
      const double decay = std::min(cfg.ema, (1.0 + s_d) / (10.0 + s_d));
      for (std::size_t i = 0; i < trainable.size(); ++i) {
        const Tensor& v = trainable[i]->value;
        for (std::size_t j = 0; j < v.numel(); ++j) {
          shadow[i][j] = decay * shadow[i][j] + (1.0 - decay) * v[j];
        }
      }
    }

    if (log) {
      rec.load_var = metric_load_var(terms.decisions);
      rec.top1_mean = metric_top1_mean(terms.decisions);
      rec.train_nll = terms.mixture_nll.value().item();
      rec.val_nll = validation_nll(policy, val, cfg.val_samples);
      if (csv.is_open()) csv << metrics_row(rec) << '\n';
      if (opts.on_record) opts.on_record(rec);
      result.records.push_back(std::move(rec));
    }
  }
  result.summary = time_average(result.records);
  std::vector<Tensor> live;
  for (std::size_t i = 0; i < shadow.size(); ++i) {
    live.push_back(std::move(trainable[i]->value));
    trainable[i]->value = std::move(shadow[i]);
  }
  if (!opts.out_dir.empty()) {
    csv.close();
    result.checkpoint = opts.out_dir / "checkpoint.bin";
    save_checkpoint(result.checkpoint, policy, adam, cfg.steps, live);
  }
  return result;
}

void save_checkpoint(const std::filesystem::path& path, const Policy& policy, const Adam& adam,
                     std::size_t step, const std::vector<Tensor>& live) {
  json params = json::array();
  for (std::size_t i = 0; i < policy.store().size(); ++i) {
    const Parameter& p = policy.store()[i];
    params.push_back({{"name", p.name}, {"value", tensor_json(p.value)}});
  }
  json m = json::array(), v = json::array();
  for (const auto& t : adam.first_moments()) m.push_back(tensor_json(t));
  for (const auto& t : adam.second_moments()) v.push_back(tensor_json(t));
  json raw = json::array();
  for (const auto& t : live) raw.push_back(tensor_json(t));
  const auto& n = policy.normalizer();
  const json doc = {{"format", "lmoe-checkpoint"},
                    {"schema_version", kCheckpointSchema},
                    {"config", format_config(policy.config())},
                    {"step", step},
                    {"normalizer", {{"lo", n.lo}, {"hi", n.hi}}},
                    {"params", std::move(params)},
                    {"live", std::move(raw)},
                    {"adam", {{"t", adam.t()}, {"lr", adam.lr()}, {"m", m}, {"v", v}}}};
  const auto bytes = json::to_cbor(doc);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const RunConfig* expect) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  json doc;
  try {
    doc = json::from_cbor(bytes);
  } catch (const std::exception& e) {
    throw IoError("checkpoint " + path.string() + " is not readable: " + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != "lmoe-checkpoint") {
    throw SchemaError(path.string() + " is not an lmoe checkpoint");
  }
  const auto version = doc.value("schema_version", "");
  if (version != kCheckpointSchema) {
    throw SchemaError("unsupported checkpoint schema_version \"" + version + "\"");
  }
  LoadedCheckpoint out;
  try {
    const RunConfig cfg = parse_config(doc.at("config").get<std::string>());
    if (expect) {
      RunConfig a = cfg, b = *expect;
      // Only the architecture has to agree.
      a.steps = b.steps;
      a.famo = b.famo;
      a.eval_trials = b.eval_trials;
      a.data_path = b.data_path;
      a.grid_experts = b.grid_experts;
      a.grid_components = b.grid_components;
      a.seeds = b.seeds;
      if (!(a == b)) throw SchemaError("checkpoint architecture differs from the configuration");
    }
    out.policy = std::make_unique<Policy>(cfg, 0);
    auto& store = out.policy->store();
    const auto& params = doc.at("params");
    if (params.size() != store.size()) {
      throw SchemaError("checkpoint has " + std::to_string(params.size()) +
                        " parameters, model expects " + std::to_string(store.size()));
    }
    for (std::size_t i = 0; i < store.size(); ++i) {
      Parameter& p = store[i];
      const auto& jp = params[i];
      Tensor value = json_tensor(jp.at("value"));
      if (jp.at("name").get<std::string>() != p.name || value.shape() != p.value.shape()) {
        throw SchemaError("checkpoint parameter " + jp.at("name").get<std::string>() + " " +
                          shape_str(value.shape()) + " does not match " + p.name + " " +
                          shape_str(p.value.shape()));
      }
      p.value = std::move(value);
    }
    auto& n = out.policy->normalizer();
    n.lo = doc.at("normalizer").at("lo").get<std::array<double, world::kActionDim>>();
    n.hi = doc.at("normalizer").at("hi").get<std::array<double, world::kActionDim>>();
    const auto& ja = doc.at("adam");
    out.adam = Adam(ja.at("lr").get<double>());
    out.adam.set_t(ja.at("t").get<std::size_t>());
    for (const auto& t : ja.at("m")) out.adam.first_moments().push_back(json_tensor(t));
    for (const auto& t : ja.at("v")) out.adam.second_moments().push_back(json_tensor(t));
    out.step = doc.at("step").get<std::size_t>();
    if (doc.contains("live")) {
      for (const auto& t : doc.at("live")) out.live.push_back(json_tensor(t));
    }
  } catch (const json::exception& e) {
    throw SchemaError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace lmoe::bench
