// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "lmoe/bench/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "lmoe/core/error.hpp"

namespace lmoe::bench {

double metric_grad_cos(const famo::GradientSet& set) {
  if (set.k() != 2) throw InvalidInput("grad_cos needs exactly two gradients");
  return famo::cosine(set.grads[0], set.grads[1]);
}

double metric_load_var(const std::vector<moe::GatingDecision>& batch) {
  if (batch.empty()) throw InvalidInput("load_var: empty batch");
  const std::size_t n = batch.front().g.size();
  std::vector<double> freq(n, 0.0);
  for (const auto& d : batch) {
    const auto it = std::max_element(d.g.begin(), d.g.end());  // first max on ties
    freq[static_cast<std::size_t>(it - d.g.begin())] += 1.0;
  }
  const double b = static_cast<double>(batch.size());
  const double mean = 1.0 / static_cast<double>(n);
  double var = 0.0;
  for (double f : freq) var += (f / b - mean) * (f / b - mean);
  return var / static_cast<double>(n);
}

double metric_top1_mean(const std::vector<moe::GatingDecision>& batch) {
  if (batch.empty()) throw InvalidInput("top1_mean: empty batch");
  double s = 0.0;
  for (const auto& d : batch) s += *std::max_element(d.g.begin(), d.g.end());
  return s / static_cast<double>(batch.size());
}

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string metrics_header() {
  return "step,grad_cos,load_var,top1_mean,val_nll,alpha_0,alpha_1,fallback,train_nll";
}

std::string metrics_row(const MetricsRecord& r) {
  auto alpha = [&](std::size_t i) {
    return i < r.alpha.size() ? format_real(r.alpha[i]) : std::string("nan");
  };
  return std::to_string(r.step) + "," + format_real(r.grad_cos) + "," +
         format_real(r.load_var) + "," + format_real(r.top1_mean) + "," +
         format_real(r.val_nll) + "," + alpha(0) + "," + alpha(1) + "," +
         (r.fallback ? "1" : "0") + "," + format_real(r.train_nll);
}

MetricsSummary time_average(const std::vector<MetricsRecord>& records) {
  MetricsSummary s;
  double n_cos = 0.0;
  for (const auto& r : records) {
    if (!std::isnan(r.grad_cos)) {
      s.grad_cos += r.grad_cos;
      n_cos += 1.0;
    }
    s.load_var += r.load_var;
    s.top1_mean += r.top1_mean;
    s.val_nll += r.val_nll;
  }
  const double n = static_cast<double>(std::max<std::size_t>(records.size(), 1));
  s.grad_cos = n_cos > 0.0 ? s.grad_cos / n_cos : std::nan("");
  s.load_var /= n;
  s.top1_mean /= n;
  s.val_nll /= n;
  return s;
}

}  // namespace lmoe::bench
