// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "lmoe/famo/modulator.hpp"
#include "lmoe/moe/head.hpp"

namespace lmoe::bench {

// Cosine of the two active experts' shared-parameter gradients; 0 if either
// is zero. Requires k == 2.
double metric_grad_cos(const famo::GradientSet& set);
// Population variance of per-expert top-1 selection frequencies.
double metric_load_var(const std::vector<moe::GatingDecision>& batch);
// Mean over sequences of max_i g_i.
double metric_top1_mean(const std::vector<moe::GatingDecision>& batch);

struct MetricsRecord {
  std::size_t step = 0;
  double grad_cos = 0.0;   // NaN when fewer than two experts are active
  double load_var = 0.0;
  double top1_mean = 0.0;
  double val_nll = 0.0;
  std::vector<double> alpha;  // empty without modulation
  bool fallback = false;
  double train_nll = 0.0;
};

// Column set of metrics CSV schema 1.
std::string metrics_header();
std::string metrics_row(const MetricsRecord& r);
std::string format_real(double v);

// Means over records of the time-varying metrics (NaNs skipped).
struct MetricsSummary {
  double grad_cos = 0.0, load_var = 0.0, top1_mean = 0.0, val_nll = 0.0;
};
MetricsSummary time_average(const std::vector<MetricsRecord>& records);

}  // namespace lmoe::bench
