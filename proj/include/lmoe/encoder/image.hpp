// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>

#include "lmoe/core/tensor.hpp"

namespace lmoe::encoder {

// RGB image with values in [0, 1], stored as a (height, width, 3) tensor.
struct ObservationImage {
  Tensor pixels;

  ObservationImage() = default;
  ObservationImage(std::size_t height, std::size_t width, double fill = 0.0)
      : pixels({height, width, 3}, fill) {}
  explicit ObservationImage(Tensor p) : pixels(std::move(p)) {}

  std::size_t height() const { return pixels.dim(0); }
  std::size_t width() const { return pixels.dim(1); }
  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width() + x) * 3 + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width() + x) * 3 + c];
  }
};

inline constexpr std::size_t kLocalPatches = 9;

// Nine non-overlapping local patches in row-major grid order plus the whole
// image area-averaged down to one patch's size.
struct PatchSet {
  std::array<ObservationImage, kLocalPatches> local;
  ObservationImage global;
};

PatchSet extract_patches(const ObservationImage& image);

}  // namespace lmoe::encoder
