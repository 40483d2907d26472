// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "lmoe/core/transformer.hpp"

#include <cmath>

#include "lmoe/core/error.hpp"
#include "lmoe/core/ops.hpp"

namespace lmoe {

Tensor init_weight(Rng& rng, std::size_t in, std::size_t out, double gain) {
  return rng.normal({in, out}, gain / std::sqrt(static_cast<double>(in)));
}

Transformer::Transformer(ParameterStore& store, const std::string& prefix,
                         const TransformerConfig& cfg, Partition partition,
                         Rng& rng)
    : cfg_(cfg) {
  if (cfg.n_heads == 0 || cfg.width % cfg.n_heads != 0) {
    throw ConfigError(prefix + ": width not divisible by n_heads");
  }
  if (cfg.n_kv_groups == 0 || cfg.n_heads % cfg.n_kv_groups != 0) {
    throw ConfigError(prefix + ": n_heads not divisible by n_kv_groups");
  }
  const std::size_t hd = cfg.width / cfg.n_heads;
  if (hd % 2 != 0) throw ConfigError(prefix + ": odd head dimension");
  const std::size_t kv = cfg.n_kv_groups * hd;
  const double out_gain = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = prefix + ".block" + std::to_string(l) + ".";
    Block b{};
    b.norm1 = &store.add(p + "norm1", Tensor({cfg.width}, 1.0), partition);
    b.wq = &store.add(p + "wq", init_weight(rng, cfg.width, cfg.width), partition);
    b.wk = &store.add(p + "wk", init_weight(rng, cfg.width, kv), partition);
    b.wv = &store.add(p + "wv", init_weight(rng, cfg.width, kv), partition);
    b.wo = &store.add(p + "wo", init_weight(rng, cfg.width, cfg.width, out_gain), partition);
    b.norm2 = &store.add(p + "norm2", Tensor({cfg.width}, 1.0), partition);
    b.w1 = &store.add(p + "w1", init_weight(rng, cfg.width, cfg.ffn_hidden), partition);
    b.w2 = &store.add(p + "w2", init_weight(rng, cfg.ffn_hidden, cfg.width, out_gain), partition);
    blocks_.push_back(b);
  }
  final_norm_ = &store.add(prefix + ".final_norm", Tensor({cfg.width}, 1.0), partition);
}

Var Transformer::forward(Tape& tape, Var x, std::size_t batch,
                         std::size_t seq) const {
  if (x.value().cols() != cfg_.width || x.value().rows() != batch * seq) {
    throw InvalidInput("transformer: input shape " + shape_str(x.shape()) +
                       " does not match batch*seq x width");
  }
  std::vector<double> positions(seq);
  for (std::size_t i = 0; i < seq; ++i) positions[i] = static_cast<double>(i);
  const ops::AttentionShape ash{batch, seq, seq, cfg_.n_heads, cfg_.n_kv_groups};
  for (const Block& b : blocks_) {
    Var h = ops::rms_norm(x, tape.param(*b.norm1), cfg_.norm_eps);
    Var q = ops::rope(ops::linear(h, tape.param(*b.wq)), positions, cfg_.n_heads, cfg_.rope_base);
    Var k = ops::rope(ops::linear(h, tape.param(*b.wk)), positions, cfg_.n_kv_groups,
                      cfg_.rope_base);
    Var v = ops::linear(h, tape.param(*b.wv));
    Var att = ops::gqa_attention(q, k, v, ash);
    x = ops::add(x, ops::linear(att, tape.param(*b.wo)));
    h = ops::rms_norm(x, tape.param(*b.norm2), cfg_.norm_eps);
    h = ops::silu(ops::linear(h, tape.param(*b.w1)));
    x = ops::add(x, ops::linear(h, tape.param(*b.w2)));
  }
  return ops::rms_norm(x, tape.param(*final_norm_), cfg_.norm_eps);
}

}  // namespace lmoe
