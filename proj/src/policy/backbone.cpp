// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "lmoe/policy/backbone.hpp"

#include <cmath>

#include "lmoe/core/error.hpp"
#include "lmoe/core/ops.hpp"

namespace lmoe::policy {

Tensor timestep_embed(std::size_t k, std::size_t dim, std::size_t max_k) {
  if (k > max_k) {
    throw InvalidInput("timestep_embed: step " + std::to_string(k) +
                       " outside [0, " + std::to_string(max_k) + "]");
  }
  if (dim < 2 || dim % 2 != 0) throw ConfigError("timestep_embed: dim must be even");
  const std::size_t half = dim / 2;
  Tensor e({dim});
  for (std::size_t i = 0; i < half; ++i) {
    const double w = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
    e[i] = std::sin(static_cast<double>(k) * w);
    e[half + i] = std::cos(static_cast<double>(k) * w);
  }
  return e;
}

Var build_condition(Tape& tape, Var z, std::size_t t_z, const Tensor& proprio,
                    std::size_t d_proprio) {
  if (proprio.cols() != d_proprio) {
    throw ConfigError("build_condition: proprio dimension " +
                      std::to_string(proprio.cols()) + " != " + std::to_string(d_proprio));
  }
  Var pooled = ops::mean_groups(z, t_z);
  if (pooled.value().rows() != proprio.rows()) {
    throw ConfigError("build_condition: batch mismatch between z and proprio");
  }
  return ops::concat_cols(pooled, tape.constant(proprio.reshaped({proprio.rows(), d_proprio})));
}

Denoiser::Denoiser(ParameterStore& store, const BackboneConfig& cfg, Rng& rng)
    : cfg_(cfg),
      transformer_(store, "backbone.transformer", cfg.transformer, Partition::kShared, rng) {
  const std::size_t d = cfg.transformer.width;
  const std::size_t ds = cfg.d_tok + cfg.d_proprio;
  w_in_ = &store.add("backbone.w_in", init_weight(rng, cfg.d_action, d), Partition::kShared);
  b_in_ = &store.add("backbone.b_in", Tensor({d}), Partition::kShared);
  w_cond_ = &store.add("backbone.w_cond", init_weight(rng, ds, d), Partition::kShared);
  b_cond_ = &store.add("backbone.b_cond", Tensor({d}), Partition::kShared);
  w_t1_ = &store.add("backbone.w_t1", init_weight(rng, cfg.d_tok, d), Partition::kShared);
  b_t1_ = &store.add("backbone.b_t1", Tensor({d}), Partition::kShared);
  w_t2_ = &store.add("backbone.w_t2", init_weight(rng, d, d), Partition::kShared);
}

Var Denoiser::forward(Tape& tape, const Tensor& noisy_actions,
                      const std::vector<std::size_t>& steps, Var condition) const {
  const std::size_t batch = steps.size();
  const std::size_t L = cfg_.horizon;
  if (noisy_actions.cols() != cfg_.d_action || noisy_actions.rows() != batch * L) {
    throw InvalidInput("denoiser: noisy actions " + shape_str(noisy_actions.shape()) +
                       " do not match batch " + std::to_string(batch) + " x L " +
                       std::to_string(L) + " x d_action " + std::to_string(cfg_.d_action));
  }
  if (condition.value().rows() != batch ||
      condition.value().cols() != cfg_.d_tok + cfg_.d_proprio) {
    throw InvalidInput("denoiser: condition shape " + shape_str(condition.shape()));
  }
  Tensor temb({batch, cfg_.d_tok});
  for (std::size_t b = 0; b < batch; ++b) {
    const Tensor e = timestep_embed(steps[b], cfg_.d_tok, cfg_.diffusion_steps);
    std::copy_n(e.data(), cfg_.d_tok, temb.data() + b * cfg_.d_tok);
  }
  Var a = ops::linear(tape.constant(noisy_actions.reshaped({batch * L, cfg_.d_action})),
                      tape.param(*w_in_), tape.param(*b_in_));
  Var c = ops::linear(condition, tape.param(*w_cond_), tape.param(*b_cond_));
  Var t = ops::silu(ops::linear(tape.constant(std::move(temb)), tape.param(*w_t1_),
                                tape.param(*b_t1_)));
  t = ops::linear(t, tape.param(*w_t2_));
  Var seq = ops::concat_groups({c, t, a}, {1, 1, L});
  Var h = transformer_.forward(tape, seq, batch, L + 2);
  return ops::slice_groups(h, L + 2, 2, L);
}

}  // namespace lmoe::policy
