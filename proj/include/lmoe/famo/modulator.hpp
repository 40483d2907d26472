// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "lmoe/core/autodiff.hpp"
#include "lmoe/moe/head.hpp"

namespace lmoe::famo {

using Vec = std::vector<double>;

// k gradients over the flattened shared partition.
struct GradientSet {
  std::vector<Vec> grads;
  std::vector<int> experts;  // owning expert per gradient, -1 for a routing slot

  std::size_t k() const { return grads.size(); }
  std::size_t length() const { return grads.empty() ? 0 : grads.front().size(); }
};

struct Coefficients {
  Vec alpha;              // on the simplex
  bool fallback = false;  // uniform weights substituted for a ~zero min-norm point
};

inline constexpr double kFallbackNorm = 1e-12;
inline constexpr int kCoordinateSweeps = 50;

// argmin over the simplex of |sum alpha_i g_i|^2.
Coefficients min_norm_coefficients(const GradientSet& set);
// Number of min_norm_coefficients calls in this process (code-path probe).
std::size_t min_norm_call_count();
// Closed-form alpha_1 for two gradients, before any fallback.
double two_task_alpha(const Vec& g1, const Vec& g2);

Vec combine(const Coefficients& c, const GradientSet& set);
Vec shared_update(const Vec& g_famo, const Vec& g_mix);

// Per-slot losses from one training forward pass. Slot r collects, for every
// sequence, its r-th selected expert's NLL; L_r = slot NLL + aux / k and
// L_mix = mixture NLL + aux.
struct ExpertLosses {
  std::vector<Var> per_expert;
  Var mix;
};

ExpertLosses per_expert_losses(const moe::TrainingTerms& terms);

struct ModulationTelemetry {
  Vec alpha;
  bool fallback = false;
  Vec grad_norms;          // |g_i|
  double grad_cos = 0.0;   // cos(g_1, g_2), NaN unless k == 2
  double famo_norm = 0.0;  // |g_FAMO|
  double mix_norm = 0.0;   // |grad L_mix|
  double shared_norm = 0.0;
};

// Runs one reverse pass per slot (shared partition only) plus one for L_mix.
// On return the shared parameters hold g_FAMO + grad L_mix, and expert-owned
// parameters hold the sum of their own slot-loss gradients.
GradientSet per_expert_gradients(Tape& tape, ParameterStore& store, const ExpertLosses& losses,
                                 Vec* mix_grad);

ModulationTelemetry modulated_backward(Tape& tape, ParameterStore& store,
                                       const ExpertLosses& losses);

// 0 when either vector is zero.
double cosine(const Vec& a, const Vec& b);

}  // namespace lmoe::famo
