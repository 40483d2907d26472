// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <functional>
#include <vector>

#include "lmoe/bench/model.hpp"
#include "lmoe/bench/world.hpp"

namespace lmoe::bench {

// Produces the next action chunk for each listed environment: returns
// [n * chunk, kActionDim] raw actions.
struct ChunkRequest {
  std::vector<std::size_t> env;       // stable environment ids
  std::vector<WorldState> states;
  std::vector<std::size_t> task;
  std::vector<std::uint64_t> seeds;   // per environment and chunk
};
using ChunkPolicy = std::function<Tensor(const ChunkRequest&)>;

struct EvalResult {
  std::size_t trials = 0;
  std::vector<std::size_t> successes;  // per task
  std::array<std::size_t, kOutcomes> outcomes{};  // over all trials

  double rate(std::size_t task) const;
  double mean_rate() const;
};

// Trial i of every task starts from the same reset seed. Each env runs
// chunk-by-chunk until the episode terminates or the horizon is reached.
EvalResult run_trials(const ChunkPolicy& policy, std::size_t n_tasks, std::size_t trials,
                      std::uint64_t seed, std::size_t chunk);

std::uint64_t trial_seed(std::uint64_t eval_seed, std::size_t trial);

ChunkPolicy model_policy(const Policy& policy);
// The scripted expert, simulated chunk-wise (closure check).
ChunkPolicy expert_policy(std::size_t chunk);
ChunkPolicy zero_policy(std::size_t chunk);

EvalResult evaluate(const Policy& policy, std::size_t trials, std::uint64_t seed);

}  // namespace lmoe::bench
