// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "lmoe/famo/modulator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

#include "lmoe/core/error.hpp"
#include "lmoe/core/ops.hpp"

namespace lmoe::famo {
namespace {

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

Vec uniform(std::size_t k) { return Vec(k, 1.0 / static_cast<double>(k)); }

std::atomic<std::size_t> g_min_norm_calls{0};

}  // namespace

double cosine(const Vec& a, const Vec& b) {
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

double two_task_alpha(const Vec& g1, const Vec& g2) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < g1.size(); ++i) {
    const double diff = g2[i] - g1[i];
    num += diff * g2[i];
    den += diff * diff;
  }
  if (den == 0.0) return 0.5;
  return std::clamp(num / den, 0.0, 1.0);
}

std::size_t min_norm_call_count() { return g_min_norm_calls.load(); }

Coefficients min_norm_coefficients(const GradientSet& set) {
  ++g_min_norm_calls;
  const std::size_t k = set.k();
  if (k == 0) throw InvalidInput("min_norm_coefficients: empty gradient set");
  for (const auto& g : set.grads) {
    if (g.size() != set.length()) throw InvalidInput("min_norm_coefficients: ragged gradients");
  }
  Coefficients c;
  if (k == 1) {
    c.alpha = {1.0};
  } else if (k == 2) {
    const double a1 = two_task_alpha(set.grads[0], set.grads[1]);
    c.alpha = {a1, 1.0 - a1};
  } else {
    // Gram matrix, then pairwise (SMO-style) exact line minimisation.
    std::vector<Vec> gram(k, Vec(k));
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = i; j < k; ++j) gram[i][j] = gram[j][i] = dot(set.grads[i], set.grads[j]);
    }
    c.alpha = uniform(k);
    for (int sweep = 0; sweep < kCoordinateSweeps; ++sweep) {
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = i + 1; j < k; ++j) {
          // Move mass t from j to i: alpha_i += t, alpha_j -= t.
          double gi = 0.0, gj = 0.0;
          for (std::size_t l = 0; l < k; ++l) {
            gi += gram[i][l] * c.alpha[l];
            gj += gram[j][l] * c.alpha[l];
          }
          const double curv = gram[i][i] + gram[j][j] - 2.0 * gram[i][j];
          if (curv <= 0.0) continue;
          const double t = std::clamp(-(gi - gj) / curv, -c.alpha[i], c.alpha[j]);
          c.alpha[i] += t;
          c.alpha[j] -= t;
        }
      }
    }
    double s = 0.0;
    for (double& a : c.alpha) s += (a = std::max(a, 0.0));
    for (double& a : c.alpha) a /= s;
  }
  if (norm(combine(c, set)) < kFallbackNorm) {
    c.alpha = uniform(k);
    c.fallback = true;
  }
  return c;
}

Vec combine(const Coefficients& c, const GradientSet& set) {
  if (c.alpha.size() != set.k()) throw InvalidInput("combine: coefficient count mismatch");
  Vec out(set.length(), 0.0);
  for (std::size_t i = 0; i < set.k(); ++i) {
    if (set.grads[i].size() != out.size()) throw InvalidInput("combine: ragged gradients");
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += c.alpha[i] * set.grads[i][j];
  }
  return out;
}

Vec shared_update(const Vec& g_famo, const Vec& g_mix) {
  if (g_famo.size() != g_mix.size()) throw InvalidInput("shared_update: length mismatch");
  Vec out(g_famo.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = g_famo[i] + g_mix[i];
  return out;
}

ExpertLosses per_expert_losses(const moe::TrainingTerms& terms) {
  if (terms.decisions.empty()) throw StateError("per_expert_losses: no forward pass recorded");
  for (const auto& d : terms.decisions) {
    if (d.mode != moe::RoutingMode::kTraining) {
      throw StateError("per_expert_losses: requires a training-mode forward");
    }
  }
  ExpertLosses out;
  const double share = 1.0 / static_cast<double>(terms.k);
  for (const Var& nll : terms.slot_nll) {
    out.per_expert.push_back(ops::add(nll, ops::scale(terms.aux, share)));
  }
  out.mix = ops::add(terms.mixture_nll, terms.aux);
  return out;
}

GradientSet per_expert_gradients(Tape& tape, ParameterStore& store, const ExpertLosses& losses,
                                 Vec* mix_grad) {
  const auto shared = store.shared();
  auto zero_shared = [&] {
    for (Parameter* p : shared) p->zero_grad();
  };
  store.zero_grad();
  if (mix_grad) {
    tape.backward(losses.mix);
    *mix_grad = store.flatten_grads(shared);
    store.zero_grad();
  }
  GradientSet set;
  for (const Var& l : losses.per_expert) {
    zero_shared();
    tape.backward(l);  // expert-owned gradients accumulate across slots
    set.grads.push_back(store.flatten_grads(shared));
    set.experts.push_back(-1);
  }
  zero_shared();
  return set;
}

ModulationTelemetry modulated_backward(Tape& tape, ParameterStore& store,
                                       const ExpertLosses& losses) {
  Vec g_mix;
  const GradientSet set = per_expert_gradients(tape, store, losses, &g_mix);
  const Coefficients c = min_norm_coefficients(set);
  const Vec g_famo = combine(c, set);
  const Vec g_shared = shared_update(g_famo, g_mix);
  store.assign_grads(store.shared(), g_shared);

  ModulationTelemetry t;
  t.alpha = c.alpha;
  t.fallback = c.fallback;
  for (const auto& g : set.grads) t.grad_norms.push_back(norm(g));
  t.grad_cos = set.k() == 2 ? cosine(set.grads[0], set.grads[1])
                            : std::numeric_limits<double>::quiet_NaN();
  t.famo_norm = norm(g_famo);
  t.mix_norm = norm(g_mix);
  t.shared_norm = norm(g_shared);
  return t;
}

}  // namespace lmoe::famo
