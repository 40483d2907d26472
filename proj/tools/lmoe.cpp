// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line driver: data generation, training, evaluation and the two
// ablation experiments.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>

#include "lmoe/bench/dataset.hpp"
#include "lmoe/bench/experiments.hpp"
#include "lmoe/core/error.hpp"

namespace {

using namespace lmoe;
using namespace lmoe::bench;

void log_line(const std::string& msg) { std::cerr << "[lmoe] " << msg << '\n'; }

std::vector<Episode> load_data(const RunConfig& cfg) {
  auto data = dataset_load(cfg.data_path);
  log_line("loaded " + std::to_string(data.size()) + " episodes from " + cfg.data_path);
  return data;
}

std::string rate_str(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", r);
  return buf;
}

void print_eval(const EvalResult& ev) {
  for (std::size_t t = 0; t < ev.successes.size(); ++t) {
    std::cout << "task " << t << ": " << ev.successes[t] << "/" << ev.trials << " ("
              << rate_str(ev.rate(t)) << ")  " << tasks()[t].instruction << '\n';
  }
  std::cout << "mean success: " << rate_str(ev.mean_rate()) << '\n';
  std::cout << "outcomes:";
  for (std::size_t o = 0; o < kOutcomes; ++o) {
    std::cout << ' ' << outcome_name(static_cast<Outcome>(o)) << '=' << ev.outcomes[o];
  }
  std::cout << '\n';
}

int run(int argc, char** argv) {
  CLI::App app{"Language-conditioned mixture-of-experts diffusion policy benchmark"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate scripted demonstrations");
  std::size_t gen_tasks = 5, gen_demos = 50;
  std::uint64_t gen_seed = 7;
  std::string gen_out;
  gen->add_option("--tasks", gen_tasks, "number of tasks")->check(CLI::Range(1, 5));
  gen->add_option("--demos", gen_demos, "demonstrations per task")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--out", gen_out, "output JSON-lines path")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a policy");
  std::string tr_config, tr_out, tr_resume;
  std::uint64_t tr_seed = 10;
  bool tr_no_famo = false;
  tr->add_option("--config", tr_config, "key = value config file")->required();
  tr->add_option("--seed", tr_seed, "training seed");
  tr->add_option("--out", tr_out, "output directory (metrics.csv, checkpoint.bin)")->required();
  tr->add_flag("--no-famo", tr_no_famo, "plain backpropagation on the mixture loss");
  tr->add_option("--resume", tr_resume, "continue from a checkpoint");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt;
  std::size_t ev_trials = 10;
  std::uint64_t ev_seed = 1;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--trials", ev_trials, "trials per task")->check(CLI::PositiveNumber);
  ev->add_option("--seed", ev_seed, "evaluation seed");

  // grid
  auto* gr = app.add_subcommand("grid", "grid search over experts x components");
  std::string gr_config, gr_out;
  gr->add_option("--config", gr_config, "config file")->required();
  gr->add_option("--out", gr_out, "output CSV")->required();

  // ablate-famo
  auto* ab = app.add_subcommand("ablate-famo", "with / without gradient modulation");
  std::string ab_config, ab_seeds = "10,20,30", ab_out;
  ab->add_option("--config", ab_config, "config file")->required();
  ab->add_option("--seeds", ab_seeds, "comma-separated seed list");
  ab->add_option("--out", ab_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  if (gen->parsed()) {
    std::size_t retries = 0;
    const auto data = generate_dataset(gen_tasks, gen_demos, gen_seed, &retries);
    if (retries > 0) {
      log_line("demonstrator regenerated " + std::to_string(retries) +
               " episode(s) with the next seed");
    }
    dataset_save(gen_out, data);
    log_line("wrote " + std::to_string(data.size()) + " episodes to " + gen_out);
  } else if (tr->parsed()) {
    RunConfig cfg = load_config(tr_config);
    if (tr_no_famo) cfg.famo = false;
    validate(cfg);
    const auto data = load_data(cfg);
    TrainOptions opts;
    opts.seed = tr_seed;
    opts.out_dir = tr_out;
    opts.on_record = [](const MetricsRecord& r) {
      log_line("step " + std::to_string(r.step) + " train_nll " + format_real(r.train_nll) +
               " val_nll " + format_real(r.val_nll) + " top1 " + format_real(r.top1_mean));
    };
    TrainResult res;
    if (!tr_resume.empty()) {
      LoadedCheckpoint ck = load_checkpoint(tr_resume, &cfg);
      if (ck.step >= cfg.steps) {
        throw ConfigError("resume: checkpoint is at step " + std::to_string(ck.step) +
                          ", train.steps must exceed it");
      }
      log_line("resuming at step " + std::to_string(ck.step));
      res = train(*ck.policy, data, opts, &ck.adam, ck.step, &ck.live);
    } else {
      Policy policy(cfg, tr_seed);
      res = train(policy, data, opts);
    }
    if (res.fallbacks > 0) log_line("min-norm fallback on " + std::to_string(res.fallbacks) + " steps");
    std::cout << "metrics: " << res.metrics_csv.string() << '\n'
              << "checkpoint: " << res.checkpoint.string() << '\n';
  } else if (ev->parsed()) {
    const LoadedCheckpoint ck = load_checkpoint(ev_ckpt);
    print_eval(evaluate(*ck.policy, ev_trials, ev_seed));
  } else if (gr->parsed()) {
    const RunConfig cfg = load_config(gr_config);
    validate(cfg);
    const auto data = load_data(cfg);
    const GridResult g = grid_search(cfg, data, {}, log_line);
    write_grid_csv(gr_out, g);
    std::cout << "grid: " << gr_out << '\n';
  } else if (ab->parsed()) {
    const RunConfig cfg = load_config(ab_config);
    validate(cfg);
    const auto seeds = parse_seed_list(ab_seeds);
    const auto data = load_data(cfg);
    const AblationResult r = ablate_famo(cfg, data, seeds, ab_out, log_line);
    const auto csv = std::filesystem::path(ab_out) / "comparison.csv";
    write_ablation_csv(csv, r);
    std::cout << "comparison: " << csv.string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const lmoe::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const lmoe::InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return 1;
  } catch (const lmoe::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 2;
  } catch (const lmoe::InvariantViolation& e) {
    std::cerr << "invariant violation: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
