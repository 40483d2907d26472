// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <vector>

#include "lmoe/bench/config.hpp"
#include "lmoe/bench/dataset.hpp"
#include "lmoe/diffusion/ddim.hpp"
#include "lmoe/encoder/lcvr.hpp"
#include "lmoe/moe/head.hpp"
#include "lmoe/policy/backbone.hpp"

namespace lmoe::bench {

// Conditioning inputs for a batch of B observations.
struct ObservationBatch {
  Tensor tokens;   // [B*10, d_tok] frozen patch tokens
  std::vector<std::vector<std::size_t>> instructions;
  Tensor proprio;  // [B, kProprioDim]

  std::size_t size() const { return instructions.size(); }
};

// The full policy: LCVR encoder -> denoiser backbone -> MoE-MDN head, with
// the diffusion schedule and the action normaliser it was trained with.
class Policy {
 public:
  Policy(const RunConfig& cfg, std::uint64_t seed);
  Policy(const Policy&) = delete;
  Policy& operator=(const Policy&) = delete;

  const RunConfig& config() const { return cfg_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  const encoder::Lcvr& lcvr() const { return *lcvr_; }
  const policy::Denoiser& denoiser() const { return *denoiser_; }
  const moe::MoeMdnHead& head() const { return *head_; }
  const diffusion::DiffusionSchedule& schedule() const { return schedule_; }
  ActionNormalizer& normalizer() { return norm_; }
  const ActionNormalizer& normalizer() const { return norm_; }

  // s = [mean-pooled z_LCVR ; proprio], [B, d_tok + kProprioDim].
  Var condition(Tape& tape, const ObservationBatch& obs) const;

  // noisy / eps: [B*L, kActionDim] in normalised units.
  moe::TrainingTerms training_terms(Tape& tape, Var condition, const Tensor& noisy,
                                    const std::vector<std::size_t>& steps,
                                    const Tensor& eps) const;

  // DDIM rollout from per-sample seeds; returns raw-unit chunks
  // [B*L, kActionDim]. The first-step routing is reported if requested.
  Tensor act(const ObservationBatch& obs, const std::vector<std::uint64_t>& seeds,
             std::vector<moe::GatingDecision>* first_routing = nullptr) const;

 private:
  RunConfig cfg_;
  ParameterStore store_;
  std::unique_ptr<encoder::Lcvr> lcvr_;
  std::unique_ptr<policy::Denoiser> denoiser_;
  std::unique_ptr<moe::MoeMdnHead> head_;
  diffusion::DiffusionSchedule schedule_;
  ActionNormalizer norm_;
};

}  // namespace lmoe::bench
