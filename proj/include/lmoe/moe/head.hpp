// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "lmoe/core/autodiff.hpp"
#include "lmoe/core/rng.hpp"

namespace lmoe::moe {

enum class RoutingMode { kTraining, kInference };

// One routing decision per action sequence.
struct GatingDecision {
  std::vector<double> g;               // full distribution over experts
  std::vector<std::size_t> selected;   // S, highest probability first
  std::vector<double> weights;         // g' over S
  RoutingMode mode = RoutingMode::kTraining;
};

// Top-2 in training, top-1 in inference, lowest index on ties. A single
// expert is only accepted as the monolithic baseline (S = {0}, g' = [1]).
GatingDecision route(std::span<const double> g, RoutingMode mode, bool monolithic = false);

// Per-timestep mixture parameters of one expert over a sequence of L steps.
struct GmmParams {
  Tensor pi;     // (L, M)
  Tensor mu;     // (L, M, d)
  Tensor sigma;  // (L, M, d)

  std::size_t steps() const { return pi.dim(0); }
  std::size_t components() const { return pi.dim(1); }
  std::size_t dim() const { return mu.dim(2); }
};

inline constexpr double kDefaultSigmaMin = 1e-4;

// log sum_{i in S} w_i exp( sum_t log sum_m pi N(eps_t | mu, diag sigma^2) ),
// log-sum-exp at both the component and expert level. eps is (L, d).
// Throws InvariantViolation if any sigma is below sigma_min.
double joint_log_density(const Tensor& eps, const std::vector<GmmParams>& experts,
                         std::span<const double> weights,
                         double sigma_min = kDefaultSigmaMin);

// alpha * CV^2(selection counts) + beta * CV^2(summed gate probabilities).
double aux_loss(const std::vector<GatingDecision>& batch, double alpha, double beta);

// Per-sequence log-density of each of n sequences under one expert's raw
// output. raw is [n*L, M*(1+2d)] laid out as [mixing logits | mu | log sigma];
// eps is [n*L, d]. Returns [n].
Var gmm_sequence_loglik(Var raw, const Tensor& eps, std::size_t steps,
                        std::size_t components, std::size_t dim, double sigma_min);

// Decode raw rows [L, M*(1+2d)] of one sequence into GmmParams.
GmmParams decode_gmm(const Tensor& raw, std::size_t components, std::size_t dim,
                     double sigma_min);

struct HeadConfig {
  std::size_t feature_dim = 64;   // D
  std::size_t n_experts = 4;      // N_e
  std::size_t n_components = 5;   // M
  std::size_t d_action = 4;
  std::size_t horizon = 16;       // L
  std::size_t expert_hidden = 128;
  double sigma_min = kDefaultSigmaMin;
  double aux_alpha = 0.01;
  double aux_beta = 0.01;
};

// Differentiable quantities of one training forward pass.
struct TrainingTerms {
  std::vector<GatingDecision> decisions;
  std::size_t k = 0;      // active experts per sequence (|S|)
  Var gate_probs;         // [B, N_e]
  Var slot_loglik;        // [B, k]; column r belongs to expert S_r(b)
  Var log_weights;        // [B, k]; log g'
  Var mixture_nll;        // -mean_b log p(eps | X_feat)
  Var aux;                // alpha L_load + beta L_importance (smooth load proxy)
  std::vector<Var> slot_nll;  // -mean_b slot_loglik[:, r]
};

class MoeMdnHead {
 public:
  MoeMdnHead(ParameterStore& store, const HeadConfig& cfg, Rng& rng);

  const HeadConfig& config() const { return cfg_; }
  bool monolithic() const { return cfg_.n_experts == 1; }
  std::size_t raw_width() const { return cfg_.n_components * (1 + 2 * cfg_.d_action); }

  // x_seq = mean over the L rows of each sequence; g = softmax(x_seq W_g).
  Var gate_probs(Tape& tape, Var x_feat, std::size_t batch) const;
  GatingDecision gate(const Tensor& x_feat, RoutingMode mode) const;

  Var expert_raw(Tape& tape, std::size_t expert, Var rows) const;
  // X_feat (L, D) of one sequence.
  GmmParams expert_forward(std::size_t expert, const Tensor& x_feat) const;

  // eps [B*L, d] is the regression target for X_feat [B*L, D].
  TrainingTerms training_terms(Tape& tape, Var x_feat, const Tensor& eps,
                               std::size_t batch) const;

  // Hard top-1 routing, then the mean of the most probable component per
  // timestep. X_feat [B*L, D] -> [B*L, d]. Only selected experts are run.
  Tensor predict_noise(const Tensor& x_feat, std::size_t batch,
                       std::vector<GatingDecision>* decisions = nullptr) const;

 private:
  struct Expert {
    Parameter* w1;
    Parameter* b1;
    Parameter* w2;
    Parameter* b2;
  };
  HeadConfig cfg_;
  Parameter* w_gate_;
  std::vector<Expert> experts_;
};

}  // namespace lmoe::moe
