// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "lmoe/encoder/image.hpp"

#include "lmoe/core/error.hpp"

namespace lmoe::encoder {

PatchSet extract_patches(const ObservationImage& image) {
  if (image.pixels.rank() != 3 || image.pixels.dim(2) != 3) {
    throw InvalidInput("extract_patches: expected (H, W, 3) image, got " +
                       shape_str(image.pixels.shape()));
  }
  const std::size_t h = image.height(), w = image.width();
  if (h == 0 || w == 0 || h % 3 != 0 || w % 3 != 0) {
    throw ConfigError("extract_patches: image " + std::to_string(h) + "x" +
                      std::to_string(w) + " is not divisible into a 3x3 grid");
  }
  const std::size_t ph = h / 3, pw = w / 3;
  PatchSet out;
  for (std::size_t gy = 0; gy < 3; ++gy) {
    for (std::size_t gx = 0; gx < 3; ++gx) {
      ObservationImage patch(ph, pw);
      for (std::size_t y = 0; y < ph; ++y) {
        for (std::size_t x = 0; x < pw; ++x) {
          for (std::size_t c = 0; c < 3; ++c) {
            patch.at(y, x, c) = image.at(gy * ph + y, gx * pw + x, c);
          }
        }
      }
      out.local[gy * 3 + gx] = std::move(patch);
    }
  }
  // Each global pixel averages the 3x3 block it covers.
  out.global = ObservationImage(ph, pw);
  for (std::size_t y = 0; y < ph; ++y) {
    for (std::size_t x = 0; x < pw; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        // Offsets from the first sample keep flat regions bit-exact.
        const double ref = image.at(3 * y, 3 * x, c);
        double s = 0.0;
        for (std::size_t dy = 0; dy < 3; ++dy) {
          for (std::size_t dx = 0; dx < 3; ++dx) s += image.at(3 * y + dy, 3 * x + dx, c) - ref;
        }
        out.global.at(y, x, c) = ref + s / 9.0;
      }
    }
  }
  return out;
}

}  // namespace lmoe::encoder
