// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "lmoe/diffusion/ddim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "lmoe/core/error.hpp"
#include "lmoe/core/rng.hpp"

namespace lmoe::diffusion {
namespace {

void check_step(std::size_t k, const DiffusionSchedule& s) {
  if (k > s.K) {
    throw InvalidInput("diffusion step " + std::to_string(k) + " outside [0, " +
                       std::to_string(s.K) + "]");
  }
}

void check_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw InvalidInput(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
  }
}

}  // namespace

DiffusionSchedule make_schedule(std::size_t K, std::size_t n_inference) {
  if (K < 1 || n_inference < 1 || n_inference > K) {
    throw ConfigError("make_schedule: need 1 <= n_inference (" + std::to_string(n_inference) +
                      ") <= K (" + std::to_string(K) + ")");
  }
  constexpr double s = 0.008;
  auto f = [&](double k) {
    const double c = std::cos((k / static_cast<double>(K) + s) / (1.0 + s) * std::numbers::pi / 2);
    return c * c;
  };
  DiffusionSchedule out;
  out.K = K;
  out.alpha_bar.assign(K + 1, 1.0);
  for (std::size_t k = 1; k <= K; ++k) {
    const double beta =
        std::min(1.0 - f(static_cast<double>(k)) / f(static_cast<double>(k - 1)), kMaxBeta);
    out.alpha_bar[k] = out.alpha_bar[k - 1] * (1.0 - beta);
  }
  for (std::size_t i = 0; i <= n_inference; ++i) {
    const double v = static_cast<double>(K) -
                     static_cast<double>(i) * static_cast<double>(K) / static_cast<double>(n_inference);
    out.inference_steps.push_back(static_cast<std::size_t>(std::llround(v)));
  }
  return out;
}

Tensor add_noise(const Tensor& a0, const Tensor& eps, std::size_t k,
                 const DiffusionSchedule& schedule) {
  check_step(k, schedule);
  check_shape(a0, eps, "add_noise");
  const double ab = schedule.alpha_bar[k];
  const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
  Tensor out(a0.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = sa * a0[i] + sn * eps[i];
  return out;
}

Tensor ddim_step(const Tensor& a_k, const Tensor& eps_pred, std::size_t k, std::size_t k_prev,
                 const DiffusionSchedule& schedule) {
  check_step(k, schedule);
  if (k_prev >= k) {
    throw InvalidInput("ddim_step: k_prev " + std::to_string(k_prev) + " must be below k " +
                       std::to_string(k));
  }
  check_shape(a_k, eps_pred, "ddim_step");
  const double ab = schedule.alpha_bar[k], ab_prev = schedule.alpha_bar[k_prev];
  const double sn = std::sqrt(1.0 - ab), sa = std::sqrt(ab);
  const double sa_prev = std::sqrt(ab_prev), sn_prev = std::sqrt(1.0 - ab_prev);
  Tensor out(a_k.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double x0 = (a_k[i] - sn * eps_pred[i]) / sa;
    out[i] = sa_prev * x0 + sn_prev * eps_pred[i];
  }
  return out;
}

Tensor denoise(Tensor a, const NoisePredictor& predictor, const DiffusionSchedule& schedule) {
  const auto& steps = schedule.inference_steps;
  for (std::size_t i = 0; i + 1 < steps.size(); ++i) {
    const Tensor eps = predictor(a, steps[i]);
    a = ddim_step(a, eps, steps[i], steps[i + 1], schedule);
  }
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] = std::clamp(a[i], -1.0, 1.0);
  return a;
}

Tensor sample(const NoisePredictor& predictor, const DiffusionSchedule& schedule,
              std::uint64_t seed, std::size_t rows, std::size_t cols) {
  Rng rng(seed);
  return denoise(rng.normal({rows, cols}, 1.0), predictor, schedule);
}

}  // namespace lmoe::diffusion
