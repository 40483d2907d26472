// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "lmoe/core/tensor.hpp"

namespace lmoe::diffusion {

struct DiffusionSchedule {
  std::size_t K = 0;
  std::vector<double> alpha_bar;             // K + 1 entries, alpha_bar[0] = 1
  std::vector<std::size_t> inference_steps;  // K, ..., 0
};

// Per-step betas of the squared-cosine schedule are capped at this value so
// the terminal step keeps a usable signal fraction.
inline constexpr double kMaxBeta = 0.1;

DiffusionSchedule make_schedule(std::size_t K, std::size_t n_inference);

// sqrt(ab[k]) a0 + sqrt(1 - ab[k]) eps
Tensor add_noise(const Tensor& a0, const Tensor& eps, std::size_t k,
                 const DiffusionSchedule& schedule);

// Deterministic (eta = 0) update from step k to k_prev < k.
Tensor ddim_step(const Tensor& a_k, const Tensor& eps_pred, std::size_t k,
                 std::size_t k_prev, const DiffusionSchedule& schedule);

// Predicts the noise in a_k at step k.
using NoisePredictor = std::function<Tensor(const Tensor& a_k, std::size_t k)>;

// Walks the inference steps from a given A^K and clamps to [-1, 1].
Tensor denoise(Tensor a_K, const NoisePredictor& predictor, const DiffusionSchedule& schedule);

// Draws A^K ~ N(0, I) from seed, walks the inference steps and clamps the
// result to [-1, 1]. Output shape is (rows, cols).
Tensor sample(const NoisePredictor& predictor, const DiffusionSchedule& schedule,
              std::uint64_t seed, std::size_t rows, std::size_t cols);

}  // namespace lmoe::diffusion
