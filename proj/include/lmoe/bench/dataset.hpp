// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "lmoe/bench/world.hpp"

namespace lmoe::bench {

inline constexpr const char* kDatasetSchema = "1";

// JSON lines, one episode per line. Images are stored as zlib-compressed
// 8-bit channels (hex); every rendered value is an exact q / 255 so this is
// lossless. Reals are written with round-trip precision.
void dataset_save(const std::filesystem::path& path, const std::vector<Episode>& episodes);
// Throws IoError (missing file, malformed line) or SchemaError, naming the
// 1-based line number.
std::vector<Episode> dataset_load(const std::filesystem::path& path);

// Demonstrations for the first n_tasks tasks, n_demos each. Demo j of every
// task starts from the same perturbation seed.
std::vector<Episode> generate_dataset(std::size_t n_tasks, std::size_t n_demos,
                                      std::uint64_t seed, std::size_t* retries = nullptr);
std::uint64_t demo_seed(std::uint64_t dataset_seed, std::size_t demo);

// Per-dimension affine map of the dataset's action range onto [-1, 1].
struct ActionNormalizer {
  std::array<double, world::kActionDim> lo{}, hi{};

  static ActionNormalizer fit(const std::vector<Episode>& episodes);
  double normalize(std::size_t dim, double v) const;
  double denormalize(std::size_t dim, double v) const;
};

}  // namespace lmoe::bench
