// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "lmoe/bench/model.hpp"

#include <algorithm>

#include "lmoe/core/error.hpp"

namespace lmoe::bench {

Policy::Policy(const RunConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  validate(cfg_);
  Rng rng(seed);
  encoder::LcvrConfig lc;
  lc.image_size = world::kImageSize;
  lc.d_tok = cfg.d_tok;
  lc.transformer = {cfg.d_tok, cfg.lcvr_layers, cfg.lcvr_heads, cfg.lcvr_kv_groups, cfg.lcvr_ffn};
  lcvr_ = std::make_unique<encoder::Lcvr>(store_, lc, encoder::Vocabulary(instruction_templates()),
                                          rng);
  policy::BackboneConfig bc;
  bc.d_tok = cfg.d_tok;
  bc.d_proprio = world::kProprioDim;
  bc.d_action = world::kActionDim;
  bc.horizon = cfg.horizon;
  bc.diffusion_steps = cfg.diffusion_steps;
  bc.transformer = {cfg.width, cfg.layers, cfg.heads, cfg.kv_groups, cfg.ffn_hidden};
  denoiser_ = std::make_unique<policy::Denoiser>(store_, bc, rng);
  moe::HeadConfig hc;
  hc.feature_dim = cfg.width;
  hc.n_experts = cfg.experts;
  hc.n_components = cfg.components;
  hc.d_action = world::kActionDim;
  hc.horizon = cfg.horizon;
  hc.expert_hidden = cfg.expert_hidden;
  hc.sigma_min = cfg.sigma_min;
  hc.aux_alpha = cfg.aux_alpha;
  hc.aux_beta = cfg.aux_beta;
  head_ = std::make_unique<moe::MoeMdnHead>(store_, hc, rng);
  schedule_ = diffusion::make_schedule(cfg.diffusion_steps, cfg.inference_steps);
  norm_.lo.fill(-1.0);
  norm_.hi.fill(1.0);
}

Var Policy::condition(Tape& tape, const ObservationBatch& obs) const {
  Var z = lcvr_->forward(tape, obs.tokens, obs.instructions);
  return policy::build_condition(tape, z, lcvr_->t_z(), obs.proprio, world::kProprioDim);
}

moe::TrainingTerms Policy::training_terms(Tape& tape, Var condition, const Tensor& noisy,
                                          const std::vector<std::size_t>& steps,
                                          const Tensor& eps) const {
  Var x_feat = denoiser_->forward(tape, noisy, steps, condition);
  return head_->training_terms(tape, x_feat, eps, steps.size());
}

Tensor Policy::act(const ObservationBatch& obs, const std::vector<std::uint64_t>& seeds,
                   std::vector<moe::GatingDecision>* first_routing) const {
  const std::size_t B = obs.size(), L = cfg_.horizon, d = world::kActionDim;
  if (seeds.size() != B) throw InvalidInput("act: one seed per observation required");
  Tensor cond;
  {
    Tape tape = Tape::inference();
    cond = condition(tape, obs).value();
  }
  Tensor a_K({B * L, d});
  for (std::size_t b = 0; b < B; ++b) {
    Rng rng(seeds[b]);
    for (std::size_t i = 0; i < L * d; ++i) a_K[b * L * d + i] = rng.normal();
  }
  bool first = true;
  auto predictor = [&](const Tensor& a_k, std::size_t k) {
    Tape tape = Tape::inference();
    Var xf = denoiser_->forward(tape, a_k, std::vector<std::size_t>(B, k), tape.constant(cond));
    std::vector<moe::GatingDecision> routing;
    Tensor eps = head_->predict_noise(xf.value(), B, &routing);
    if (first && first_routing) *first_routing = std::move(routing);
    first = false;
    return eps;
  };
  Tensor a0 = diffusion::denoise(std::move(a_K), predictor, schedule_);
  for (std::size_t r = 0; r < B * L; ++r) {
    for (std::size_t j = 0; j < d; ++j) a0[r * d + j] = norm_.denormalize(j, a0[r * d + j]);
  }
  return a0;
}

}  // namespace lmoe::bench
