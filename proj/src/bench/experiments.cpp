// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "lmoe/bench/experiments.hpp"

#include <chrono>
#include <cstdio>
#include <cmath>
#include <fstream>

#include "lmoe/core/error.hpp"

namespace lmoe::bench {
namespace {

void emit(const LogFn& log, const std::string& msg) {
  if (log) log(msg);
}

std::string pct(double rate) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * rate);
  return buf;
}

MetricsSummary mean_summary(const std::vector<RunOutcome>& runs) {
  MetricsSummary m;
  std::size_t n_cos = 0;
  for (const auto& r : runs) {
    if (!std::isnan(r.summary.grad_cos)) {
      m.grad_cos += r.summary.grad_cos;
      ++n_cos;
    }
    m.load_var += r.summary.load_var;
    m.top1_mean += r.summary.top1_mean;
    m.val_nll += r.summary.val_nll;
  }
  const double n = static_cast<double>(runs.size());
  m.grad_cos = n_cos ? m.grad_cos / static_cast<double>(n_cos) : std::nan("");
  m.load_var /= n;
  m.top1_mean /= n;
  m.val_nll /= n;
  return m;
}

double mean_success(const std::vector<RunOutcome>& runs) {
  double s = 0.0;
  for (const auto& r : runs) s += r.eval.mean_rate();
  return runs.empty() ? 0.0 : s / static_cast<double>(runs.size());
}

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

RunOutcome run_once(const RunConfig& cfg, const std::vector<Episode>& data, std::uint64_t seed,
                    const std::filesystem::path& out_dir, const LogFn& log) {
  validate(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  Policy policy(cfg, seed);
  TrainOptions opts;
  opts.seed = seed;
  opts.out_dir = out_dir;
  const TrainResult tr = train(policy, data, opts);
  RunOutcome out;
  out.seed = seed;
  out.summary = tr.summary;
  out.fallbacks = tr.fallbacks;
  out.eval = evaluate(policy, cfg.eval_trials, seed);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  emit(log, "N_e=" + std::to_string(cfg.experts) + " M=" + std::to_string(cfg.components) +
                " famo=" + (cfg.famo ? "on" : "off") + " seed=" + std::to_string(seed) +
                " success=" + pct(out.eval.mean_rate()) + " (" +
                std::to_string(static_cast<int>(out.seconds)) + " s)");
  return out;
}

const GridCell& GridResult::at(std::size_t n_e, std::size_t m) const {
  for (const auto& c : cells) {
    if (c.experts == n_e && c.components == m) return c;
  }
  throw InvalidInput("grid: no cell (" + std::to_string(n_e) + ", " + std::to_string(m) + ")");
}

double GridResult::column_mean(std::size_t m) const {
  double s = 0.0;
  for (std::size_t e : experts) s += at(e, m).success;
  return experts.empty() ? 0.0 : s / static_cast<double>(experts.size());
}

GridResult grid_search(const RunConfig& cfg, const std::vector<Episode>& data,
                       const std::filesystem::path& out_dir, const LogFn& log) {
  if (cfg.grid_experts.empty() || cfg.grid_components.empty() || cfg.seeds.empty()) {
    throw ConfigError("grid: grid.experts, grid.components and run.seeds must be non-empty");
  }
  GridResult g;
  g.experts = cfg.grid_experts;
  g.components = cfg.grid_components;
  for (std::size_t n_e : g.experts) {
    for (std::size_t m : g.components) {
      RunConfig c = cfg;
      c.experts = n_e;
      c.components = m;
      GridCell cell;
      cell.experts = n_e;
      cell.components = m;
      for (std::uint64_t seed : cfg.seeds) {
        std::filesystem::path dir;
        if (!out_dir.empty()) {
          dir = out_dir / ("ne" + std::to_string(n_e) + "_m" + std::to_string(m) + "_s" +
                           std::to_string(seed));
        }
        cell.runs.push_back(run_once(c, data, seed, dir, log));
      }
      cell.success = mean_success(cell.runs);
      g.cells.push_back(std::move(cell));
    }
  }
  return g;
}

void write_grid_csv(const std::filesystem::path& path, const GridResult& grid) {
  std::ofstream out = open_csv(path);
  out << "n_experts";
  for (std::size_t m : grid.components) out << ",m" << m;
  out << '\n';
  for (std::size_t n_e : grid.experts) {
    out << n_e;
    for (std::size_t m : grid.components) out << ',' << format_real(grid.at(n_e, m).success);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

AblationResult ablate_famo(const RunConfig& cfg, const std::vector<Episode>& data,
                           const std::vector<std::uint64_t>& seeds,
                           const std::filesystem::path& out_dir, const LogFn& log) {
  if (seeds.empty()) throw ConfigError("ablate-famo: at least one seed is required");
  AblationResult r;
  for (bool famo : {true, false}) {
    AblationArm& arm = famo ? r.with_famo : r.without_famo;
    arm.famo = famo;
    RunConfig c = cfg;
    c.famo = famo;
    for (std::uint64_t seed : seeds) {
      std::filesystem::path dir;
      if (!out_dir.empty()) {
        dir = out_dir / ((famo ? "famo_s" : "nofamo_s") + std::to_string(seed));
      }
      arm.runs.push_back(run_once(c, data, seed, dir, log));
    }
    arm.summary = mean_summary(arm.runs);
    arm.success = mean_success(arm.runs);
  }
  return r;
}

void write_ablation_csv(const std::filesystem::path& path, const AblationResult& result) {
  std::ofstream out = open_csv(path);
  out << "arm,seed,grad_cos,load_var,top1_mean,val_nll,success\n";
  auto row = [&](const char* arm, const std::string& seed, const MetricsSummary& m,
                 double success) {
    out << arm << ',' << seed << ',' << format_real(m.grad_cos) << ',' << format_real(m.load_var)
        << ',' << format_real(m.top1_mean) << ',' << format_real(m.val_nll) << ','
        << format_real(success) << '\n';
  };
  for (const AblationArm* arm : {&result.with_famo, &result.without_famo}) {
    const char* name = arm->famo ? "famo" : "no_famo";
    for (const auto& run : arm->runs) {
      row(name, std::to_string(run.seed), run.summary, run.eval.mean_rate());
    }
  }
  for (const AblationArm* arm : {&result.with_famo, &result.without_famo}) {
    row(arm->famo ? "famo" : "no_famo", "mean", arm->summary, arm->success);
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace lmoe::bench
