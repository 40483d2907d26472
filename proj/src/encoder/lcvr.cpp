// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "lmoe/encoder/lcvr.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "lmoe/core/error.hpp"
#include "lmoe/core/ops.hpp"

namespace lmoe::encoder {

Vocabulary::Vocabulary(const std::vector<std::string>& templates) {
  for (const auto& t : templates) {
    const auto words = split(t);
    max_len_ = std::max(max_len_, words.size());
    for (const auto& w : words) {
      if (!ids_.contains(w)) {
        words_.push_back(w);
        ids_.emplace(w, words_.size());  // ids start after <unk>
      }
    }
  }
}

std::vector<std::string> Vocabulary::split(const std::string& text) {
  std::istringstream is(text);
  std::vector<std::string> out;
  std::string w;
  while (is >> w) {
    std::transform(w.begin(), w.end(), w.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<std::size_t> Vocabulary::encode(const std::string& text) const {
  std::vector<std::size_t> ids;
  for (const auto& w : split(text)) {
    auto it = ids_.find(w);
    ids.push_back(it == ids_.end() ? kUnknown : it->second);
  }
  return ids;
}

FrozenPatchEncoder::FrozenPatchEncoder(ParameterStore& store,
                                       std::size_t patch_size,
                                       std::size_t hidden, std::size_t d_tok,
                                       std::uint64_t seed)
    : patch_(patch_size), d_tok_(d_tok) {
  Rng rng(seed);
  const std::size_t in = patch_size * patch_size * 3;
  w1_ = &store.add("stub.w1", init_weight(rng, in, hidden, 4.0), Partition::kShared, -1,
                   /*trainable=*/false);
  b1_ = &store.add("stub.b1", rng.normal({hidden}, 0.5), Partition::kShared, -1, false);
  w2_ = &store.add("stub.w2", init_weight(rng, hidden, d_tok), Partition::kShared, -1, false);
}

Tensor FrozenPatchEncoder::encode(const ObservationImage& patch) const {
  if (patch.pixels.rank() != 3 || patch.height() != patch_ || patch.width() != patch_ ||
      patch.pixels.dim(2) != 3) {
    throw InvalidInput("frozen encoder: expected " + std::to_string(patch_) + "x" +
                       std::to_string(patch_) + "x3 patch, got " +
                       shape_str(patch.pixels.shape()));
  }
  using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const std::size_t in = patch.pixels.numel();
  const std::size_t hidden = b1_->value.numel();
  RowVec x = Eigen::Map<const RowVec>(patch.pixels.data(), in).array() - 0.5;
  RowVec h = x * Eigen::Map<const RowMat>(w1_->value.data(), in, hidden) +
             Eigen::Map<const RowVec>(b1_->value.data(), hidden);
  h = h.array().tanh();
  Tensor out({d_tok_});
  Eigen::Map<RowVec>(out.data(), d_tok_) =
      h * Eigen::Map<const RowMat>(w2_->value.data(), hidden, d_tok_);
  return out;
}

namespace {

LcvrConfig checked(LcvrConfig cfg) {
  if (cfg.transformer.width != cfg.d_tok) {
    throw ConfigError("lcvr: transformer width must equal d_tok");
  }
  if (cfg.image_size == 0 || cfg.image_size % 3 != 0) {
    throw ConfigError("lcvr: image_size must be divisible by 3");
  }
  return cfg;
}

}  // namespace

Lcvr::Lcvr(ParameterStore& store, const LcvrConfig& cfg, Vocabulary vocab, Rng& rng)
    : cfg_(checked(cfg)),
      vocab_(std::move(vocab)),
      t_z_(cfg.t_z != 0 ? cfg.t_z : 1 + vocab_.max_template_length()),
      stub_(store, cfg.image_size / 3, cfg.stub_hidden, cfg.d_tok, cfg.stub_seed),
      store_(&store),
      transformer_(store, "lcvr.transformer", cfg.transformer, Partition::kShared, rng) {
  if (t_z_ < 2) throw ConfigError("lcvr: t_z must leave room for one word");
  const std::size_t d = cfg_.d_tok;
  grid_embed_ = &store.add("lcvr.grid_embed", rng.normal({kLocalPatches, d}, 0.1),
                           Partition::kShared);
  wq_ = &store.add("lcvr.fuse.wq", init_weight(rng, d, d), Partition::kShared);
  wk_ = &store.add("lcvr.fuse.wk", init_weight(rng, d, d), Partition::kShared);
  wv_ = &store.add("lcvr.fuse.wv", init_weight(rng, d, d), Partition::kShared);
  wo_ = &store.add("lcvr.fuse.wo", init_weight(rng, d, d), Partition::kShared);
  word_embed_ = &store.add("lcvr.word_embed", rng.normal({vocab_.size(), d}, 1.0),
                           Partition::kShared);
  pad_ = &store.add("lcvr.pad", rng.normal({1, d}, 1.0), Partition::kShared);
}

Tensor Lcvr::patch_tokens(const ObservationImage& image) const {
  if (image.pixels.rank() != 3 || image.height() != cfg_.image_size ||
      image.width() != cfg_.image_size) {
    if (image.pixels.rank() == 3 && (image.height() % 3 != 0 || image.width() % 3 != 0)) {
      throw ConfigError("lcvr: image dims not divisible by 3");
    }
    throw InvalidInput("lcvr: expected " + std::to_string(cfg_.image_size) +
                       " square image, got " + shape_str(image.pixels.shape()));
  }
  const PatchSet patches = extract_patches(image);
  const std::size_t d = cfg_.d_tok;
  Tensor out({kPatchTokens, d});
  for (std::size_t i = 0; i < kLocalPatches; ++i) {
    const Tensor tok = stub_.encode(patches.local[i]);
    std::copy_n(tok.data(), d, out.data() + i * d);
  }
  const Tensor g = stub_.encode(patches.global);
  std::copy_n(g.data(), d, out.data() + kLocalPatches * d);
  return out;
}

std::vector<std::size_t> Lcvr::tokenize(const std::string& instruction) const {
  auto ids = vocab_.encode(instruction);
  if (ids.empty()) throw InvalidInput("lcvr: empty instruction");
  if (ids.size() > t_z_ - 1) ids.resize(t_z_ - 1);
  return ids;
}

Var Lcvr::fuse(Tape& tape, Var global, Var local, std::size_t batch) const {
  const std::size_t d = cfg_.d_tok;
  if (global.value().rows() != batch || global.value().cols() != d) {
    throw InvalidInput("fuse: expected one global token per sample");
  }
  if (local.value().cols() != d || local.value().rows() != batch * kLocalPatches) {
    throw InvalidInput("fuse: expected exactly 9 local tokens per sample, got " +
                       shape_str(local.shape()));
  }
  Var kv_in = ops::add_broadcast(local, tape.param(*grid_embed_));
  Var q = ops::linear(global, tape.param(*wq_));
  Var k = ops::linear(kv_in, tape.param(*wk_));
  Var v = ops::linear(kv_in, tape.param(*wv_));
  Var att = ops::gqa_attention(q, k, v, {batch, 1, kLocalPatches, 1, 1});
  return ops::linear(att, tape.param(*wo_));
}

Var Lcvr::forward(Tape& tape, const Tensor& tokens,
                  const std::vector<std::vector<std::size_t>>& instructions) const {
  const std::size_t batch = instructions.size();
  const std::size_t d = cfg_.d_tok;
  if (tokens.cols() != d || tokens.rows() != batch * kPatchTokens) {
    throw InvalidInput("lcvr: patch tokens shape " + shape_str(tokens.shape()) +
                       " does not match batch of " + std::to_string(batch));
  }
  Var all = tape.constant(tokens.reshaped({batch * kPatchTokens, d}));
  Var local = ops::slice_groups(all, kPatchTokens, 0, kLocalPatches);
  Var global = ops::slice_groups(all, kPatchTokens, kLocalPatches, 1);
  Var vision = fuse(tape, global, local, batch);

  const std::size_t words = t_z_ - 1;
  const std::size_t pad_row = vocab_.size();
  std::vector<std::size_t> rows;
  rows.reserve(batch * words);
  for (const auto& ids : instructions) {
    if (ids.empty()) throw InvalidInput("lcvr: empty instruction");
    for (std::size_t i = 0; i < words; ++i) {
      if (i < ids.size()) {
        if (ids[i] >= vocab_.size()) throw InvalidInput("lcvr: token id out of range");
        rows.push_back(ids[i]);
      } else {
        rows.push_back(pad_row);
      }
    }
  }
  Var table = ops::concat_rows({tape.param(*word_embed_), tape.param(*pad_)});
  Var lang = ops::gather_rows(table, rows);
  Var seq = ops::concat_groups({vision, lang}, {1, words});
  return transformer_.forward(tape, seq, batch, t_z_);
}

Tensor Lcvr::encode(const ObservationImage& image, const std::string& instruction) const {
  Tape tape = Tape::inference();
  Var z = forward(tape, patch_tokens(image), {tokenize(instruction)});
  return z.value().reshaped({t_z_, cfg_.d_tok});
}

}  // namespace lmoe::encoder
