// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "lmoe/core/autodiff.hpp"
#include "lmoe/core/rng.hpp"
#include "lmoe/core/transformer.hpp"
#include "lmoe/encoder/image.hpp"

namespace lmoe::encoder {

// Closed word vocabulary. Id 0 is reserved for unknown words.
class Vocabulary {
 public:
  static constexpr std::size_t kUnknown = 0;

  Vocabulary() = default;
  explicit Vocabulary(const std::vector<std::string>& templates);

  // Lowercased whitespace split; never fails on unseen words.
  static std::vector<std::string> split(const std::string& text);

  std::vector<std::size_t> encode(const std::string& text) const;
  std::size_t size() const { return words_.size() + 1; }
  std::size_t max_template_length() const { return max_len_; }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> ids_;
  std::size_t max_len_ = 0;
};

struct LcvrConfig {
  std::size_t image_size = 48;
  std::size_t d_tok = 32;
  std::size_t stub_hidden = 64;
  std::uint64_t stub_seed = 0x5eedf00d;
  // Fused sequence length; 0 means 1 + longest template.
  std::size_t t_z = 0;
  TransformerConfig transformer{32, 2, 4, 2, 64};
};

// Stand-in for a pretrained patch encoder: a fixed random two-layer map from
// flattened pixels to a token. Its weights are registered as frozen
// parameters so they travel with checkpoints but never train.
class FrozenPatchEncoder {
 public:
  FrozenPatchEncoder(ParameterStore& store, std::size_t patch_size,
                     std::size_t hidden, std::size_t d_tok, std::uint64_t seed);

  Tensor encode(const ObservationImage& patch) const;  // [d_tok]
  std::size_t patch_size() const { return patch_; }

 private:
  std::size_t patch_;
  std::size_t d_tok_;
  Parameter* w1_;
  Parameter* b1_;
  Parameter* w2_;
};

// Rows 0..8 are the local tokens in grid order, row 9 the global token.
inline constexpr std::size_t kPatchTokens = kLocalPatches + 1;

class Lcvr {
 public:
  Lcvr(ParameterStore& store, const LcvrConfig& cfg, Vocabulary vocab, Rng& rng);

  std::size_t d_tok() const { return cfg_.d_tok; }
  std::size_t t_z() const { return t_z_; }
  const Vocabulary& vocabulary() const { return vocab_; }

  // Frozen tokens of one observation, [10, d_tok].
  Tensor patch_tokens(const ObservationImage& image) const;

  // Tokenised instruction, truncated to fit the fused sequence. Empty
  // instructions are rejected.
  std::vector<std::size_t> tokenize(const std::string& instruction) const;

  // Single-query attention of each global token over its nine local tokens
  // (each augmented with a learned grid-index embedding), then an output
  // projection. global [B, d_tok], local [B*9, d_tok] -> [B, d_tok].
  Var fuse(Tape& tape, Var global, Var local, std::size_t batch) const;

  // patch_tokens: [B*10, d_tok] as produced by patch_tokens(); returns
  // z_LCVR laid out as [B*T_z, d_tok].
  Var forward(Tape& tape, const Tensor& patch_tokens,
              const std::vector<std::vector<std::size_t>>& instructions) const;

  // Convenience single-sample evaluation, (T_z, d_tok).
  Tensor encode(const ObservationImage& image, const std::string& instruction) const;

 private:
  LcvrConfig cfg_;
  Vocabulary vocab_;
  std::size_t t_z_;
  FrozenPatchEncoder stub_;
  ParameterStore* store_;
  Parameter* grid_embed_;
  Parameter* wq_;
  Parameter* wk_;
  Parameter* wv_;
  Parameter* wo_;
  Parameter* word_embed_;
  Parameter* pad_;
  Transformer transformer_;
};

}  // namespace lmoe::encoder
