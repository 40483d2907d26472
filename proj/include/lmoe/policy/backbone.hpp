// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "lmoe/core/autodiff.hpp"
#include "lmoe/core/rng.hpp"
#include "lmoe/core/transformer.hpp"

namespace lmoe::policy {

struct BackboneConfig {
  std::size_t d_tok = 32;
  std::size_t d_proprio = 4;
  std::size_t d_action = 4;
  std::size_t horizon = 16;        // L
  std::size_t diffusion_steps = 100;  // K
  TransformerConfig transformer{64, 2, 4, 2, 128};
};

// Sinusoidal embedding: first half sin(k * w_i), second half cos(k * w_i)
// with w_i = 10000^(-i / (dim/2)). Throws for k outside [0, max_k].
Tensor timestep_embed(std::size_t k, std::size_t dim, std::size_t max_k);

// s = [mean over the T_z tokens of z ; proprio] with z laid out
// [B*T_z, d_tok] and proprio [B, d_proprio].
Var build_condition(Tape& tape, Var z, std::size_t t_z, const Tensor& proprio,
                    std::size_t d_proprio);

// Conditional denoiser producing X_feat [B*L, D] from noisy action chunks.
// The projected condition and timestep embedding are prepended as two
// context tokens; the action tokens' outputs form X_feat. All parameters sit
// in the shared partition.
class Denoiser {
 public:
  Denoiser(ParameterStore& store, const BackboneConfig& cfg, Rng& rng);

  const BackboneConfig& config() const { return cfg_; }
  std::size_t feature_dim() const { return cfg_.transformer.width; }

  Var forward(Tape& tape, const Tensor& noisy_actions,
              const std::vector<std::size_t>& steps, Var condition) const;

 private:
  BackboneConfig cfg_;
  Parameter* w_in_;
  Parameter* b_in_;
  Parameter* w_cond_;
  Parameter* b_cond_;
  Parameter* w_t1_;
  Parameter* b_t1_;
  Parameter* w_t2_;
  Transformer transformer_;
};

}  // namespace lmoe::policy
