// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lmoe::bench {

// Every knob of a run. Defaults match configs/default.conf.
struct RunConfig {
  // data
  std::string data_path = "data/episodes.jsonl";
  std::size_t data_tasks = 5;
  std::size_t data_demos = 50;
  std::uint64_t data_seed = 7;

  // model
  std::size_t d_tok = 32;
  std::size_t lcvr_layers = 2;
  std::size_t lcvr_heads = 4;
  std::size_t lcvr_kv_groups = 2;
  std::size_t lcvr_ffn = 64;
  std::size_t width = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t kv_groups = 2;
  std::size_t ffn_hidden = 128;
  std::size_t experts = 4;
  std::size_t components = 5;
  std::size_t expert_hidden = 64;
  std::size_t horizon = 16;
  std::size_t diffusion_steps = 100;
  std::size_t inference_steps = 10;
  double sigma_min = 1e-4;
  double aux_alpha = 0.01;
  double aux_beta = 0.01;

  // train
  std::size_t steps = 4000;
  std::size_t batch = 16;
  double lr = 3e-3;
  bool famo = true;
  double grad_clip = 0.0;  // global-norm clip, 0 disables
  double ema = 0.999;      // EMA decay of evaluation weights, 0 disables
  std::size_t log_every = 50;
  std::size_t val_samples = 64;

  // eval
  std::size_t eval_trials = 10;

  // grid / ablation
  std::vector<std::size_t> grid_experts{1, 2, 4};
  std::vector<std::size_t> grid_components{1, 3, 5};
  std::vector<std::uint64_t> seeds{10, 20, 30};

  bool operator==(const RunConfig&) const = default;
};

// `key = value` lines, '#' comments. Unknown keys and bad values are all
// reported together in one ConfigError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
std::string format_config(const RunConfig& cfg);

// Cross-field checks; throws ConfigError listing every offending key.
void validate(const RunConfig& cfg);

std::vector<std::uint64_t> parse_seed_list(const std::string& text);

}  // namespace lmoe::bench
