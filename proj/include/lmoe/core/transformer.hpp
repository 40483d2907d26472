// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "lmoe/core/autodiff.hpp"
#include "lmoe/core/rng.hpp"

namespace lmoe {

struct TransformerConfig {
  std::size_t width = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t n_kv_groups = 2;
  std::size_t ffn_hidden = 128;
  double rope_base = 10000.0;
  double norm_eps = 1e-6;
};

// Pre-norm encoder stack: RMSNorm -> grouped-query self-attention with
// rotary positions -> residual, RMSNorm -> SiLU MLP -> residual, and a final
// RMSNorm. Sequences are laid out as [batch * seq, width].
class Transformer {
 public:
  Transformer(ParameterStore& store, const std::string& prefix,
              const TransformerConfig& cfg, Partition partition, Rng& rng);

  Var forward(Tape& tape, Var x, std::size_t batch, std::size_t seq) const;

  const TransformerConfig& config() const { return cfg_; }

 private:
  struct Block {
    Parameter* norm1;
    Parameter* wq;
    Parameter* wk;
    Parameter* wv;
    Parameter* wo;
    Parameter* norm2;
    Parameter* w1;
    Parameter* w2;
  };
  TransformerConfig cfg_;
  std::vector<Block> blocks_;
  Parameter* final_norm_;
};

// N(0, 1/fan_in) initialisation for an [in, out] weight.
Tensor init_weight(Rng& rng, std::size_t in, std::size_t out, double gain = 1.0);

}  // namespace lmoe
