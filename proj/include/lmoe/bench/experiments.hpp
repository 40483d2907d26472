// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "lmoe/bench/evaluate.hpp"
#include "lmoe/bench/trainer.hpp"

namespace lmoe::bench {

using LogFn = std::function<void(const std::string&)>;

// One train + evaluate pass. Evaluation reuses the training seed.
struct RunOutcome {
  std::uint64_t seed = 0;
  MetricsSummary summary;
  std::size_t fallbacks = 0;
  EvalResult eval;
  double seconds = 0.0;
};

// Artifacts go to out_dir when it is non-empty.
RunOutcome run_once(const RunConfig& cfg, const std::vector<Episode>& data, std::uint64_t seed,
                    const std::filesystem::path& out_dir = {}, const LogFn& log = {});

struct GridCell {
  std::size_t experts = 0, components = 0;
  std::vector<RunOutcome> runs;  // one per seed
  double success = 0.0;          // mean over seeds and tasks
};

struct GridResult {
  std::vector<std::size_t> experts, components;
  std::vector<GridCell> cells;  // row-major: experts x components

  const GridCell& at(std::size_t n_e, std::size_t m) const;
  // Mean success of an M column over every N_e row.
  double column_mean(std::size_t m) const;
};

// Trains and evaluates every (N_e, M) of the configured grid over cfg.seeds.
GridResult grid_search(const RunConfig& cfg, const std::vector<Episode>& data,
                       const std::filesystem::path& out_dir = {}, const LogFn& log = {});
// One row per N_e, one column per M; entries are mean success rates.
void write_grid_csv(const std::filesystem::path& path, const GridResult& grid);

struct AblationArm {
  bool famo = false;
  std::vector<RunOutcome> runs;
  MetricsSummary summary;  // time averages, then mean over seeds
  double success = 0.0;
};

struct AblationResult {
  AblationArm with_famo, without_famo;
};

AblationResult ablate_famo(const RunConfig& cfg, const std::vector<Episode>& data,
                           const std::vector<std::uint64_t>& seeds,
                           const std::filesystem::path& out_dir = {}, const LogFn& log = {});
// Per-seed rows for both arms followed by one mean row per arm.
void write_ablation_csv(const std::filesystem::path& path, const AblationResult& result);

}  // namespace lmoe::bench
