// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include "lmoe/bench/metrics.hpp"
#include "lmoe/bench/model.hpp"
#include "lmoe/bench/optim.hpp"

namespace lmoe::bench {

inline constexpr const char* kCheckpointSchema = "1";

// One supervised example: the observation at step t of an episode and the
// normalised action chunk t .. t+L-1 (padded with the episode's last action).
struct TrainingExample {
  Tensor tokens;  // [10, d_tok]
  std::vector<std::size_t> instruction;
  Tensor proprio;  // [kProprioDim]
  Tensor chunk;    // [L, kActionDim], normalised
};

std::vector<TrainingExample> build_examples(const Policy& policy,
                                            const std::vector<Episode>& episodes);

struct TrainOptions {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;  // empty: keep everything in memory
  std::function<void(const MetricsRecord&)> on_record;
};

struct TrainResult {
  std::vector<MetricsRecord> records;
  MetricsSummary summary;
  std::size_t fallbacks = 0;
  std::filesystem::path checkpoint;
  std::filesystem::path metrics_csv;
};

// Runs cfg.steps optimisation steps on `policy` (resuming at `start_step`
// with an existing optimiser state when given). With train.ema > 0 the
// policy ends up holding the averaged weights; `resume_live` restores the
// raw weights the average was taken over.
TrainResult train(Policy& policy, const std::vector<Episode>& data, const TrainOptions& opts,
                  Adam* resume_optimizer = nullptr, std::size_t start_step = 0,
                  const std::vector<Tensor>* resume_live = nullptr);

// Fixed validation examples: held-out demonstrations from seeds disjoint
// from the training set.
std::vector<Episode> validation_episodes(const RunConfig& cfg);

double validation_nll(const Policy& policy, const std::vector<TrainingExample>& val,
                      std::size_t n_samples);

// `live` holds the raw trainable weights when the policy carries EMA weights.
void save_checkpoint(const std::filesystem::path& path, const Policy& policy, const Adam& adam,
                     std::size_t step, const std::vector<Tensor>& live = {});

struct LoadedCheckpoint {
  std::unique_ptr<Policy> policy;
  Adam adam{1e-3};
  std::size_t step = 0;
  std::vector<Tensor> live;  // empty unless trained with EMA
};
// `expect` optionally pins the architecture; a mismatch is a SchemaError.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 const RunConfig* expect = nullptr);

}  // namespace lmoe::bench
