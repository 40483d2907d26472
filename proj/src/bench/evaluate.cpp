// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "lmoe/bench/evaluate.hpp"

#include <map>
#include <memory>
#include <numeric>

#include "lmoe/core/error.hpp"
#include "lmoe/core/rng.hpp"

namespace lmoe::bench {

double EvalResult::rate(std::size_t task) const {
  return trials == 0 ? 0.0
                     : static_cast<double>(successes.at(task)) / static_cast<double>(trials);
}

double EvalResult::mean_rate() const {
  if (successes.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t t = 0; t < successes.size(); ++t) s += rate(t);
  return s / static_cast<double>(successes.size());
}

std::uint64_t trial_seed(std::uint64_t eval_seed, std::size_t trial) {
  return mix_seed(eval_seed, 0xe7a1 + trial);
}

EvalResult run_trials(const ChunkPolicy& policy, std::size_t n_tasks, std::size_t trials,
                      std::uint64_t seed, std::size_t chunk) {
  if (n_tasks == 0 || n_tasks > tasks().size()) throw ConfigError("eval: bad task count");
  if (chunk == 0) throw ConfigError("eval: chunk length must be positive");
  const std::size_t n_env = n_tasks * trials;
  std::vector<WorldState> states(n_env);
  for (std::size_t t = 0; t < n_tasks; ++t) {
    for (std::size_t i = 0; i < trials; ++i) states[t * trials + i] = reset(trial_seed(seed, i));
  }
  for (std::size_t c = 0;; ++c) {
    ChunkRequest req;
    for (std::size_t e = 0; e < n_env; ++e) {
      if (states[e].done) continue;
      req.env.push_back(e);
      req.states.push_back(states[e]);
      req.task.push_back(e / trials);
      req.seeds.push_back(mix_seed(mix_seed(seed, 0xc4a0 + e), c));
    }
    if (req.env.empty()) break;
    const Tensor actions = policy(req);
    if (actions.rows() != req.env.size() * chunk || actions.cols() != world::kActionDim) {
      throw InvalidInput("eval: policy returned " + shape_str(actions.shape()));
    }
    for (std::size_t j = 0; j < req.env.size(); ++j) {
      WorldState& s = states[req.env[j]];
      for (std::size_t i = 0; i < chunk && !s.done; ++i) {
        step(s, std::span<const double>(actions.data() + (j * chunk + i) * world::kActionDim,
                                        world::kActionDim));
      }
    }
  }
  EvalResult r;
  r.trials = trials;
  r.successes.assign(n_tasks, 0);
  for (std::size_t e = 0; e < n_env; ++e) {
    const Outcome o = classify(states[e], tasks()[e / trials]);
    ++r.outcomes[static_cast<std::size_t>(o)];
    if (o == Outcome::kSuccess) ++r.successes[e / trials];
  }
  return r;
}

ChunkPolicy model_policy(const Policy& policy) {
  return [&policy](const ChunkRequest& req) {
    const std::size_t n = req.env.size(), dt = policy.config().d_tok;
    ObservationBatch obs;
    obs.tokens = Tensor({n * encoder::kPatchTokens, dt});
    obs.proprio = Tensor({n, world::kProprioDim});
    for (std::size_t j = 0; j < n; ++j) {
      const Tensor tok = policy.lcvr().patch_tokens(render(req.states[j]));
      std::copy_n(tok.data(), tok.numel(), obs.tokens.data() + j * tok.numel());
      const Tensor p = proprio(req.states[j]);
      std::copy_n(p.data(), p.numel(), obs.proprio.data() + j * world::kProprioDim);
      obs.instructions.push_back(policy.lcvr().tokenize(tasks()[req.task[j]].instruction));
    }
    return policy.act(obs, req.seeds);
  };
}

ChunkPolicy expert_policy(std::size_t chunk) {
  // Controllers persist per environment; simulating the chunk ahead keeps
  // their phase in step with the real rollout because the world is
  // deterministic.
  auto controllers = std::make_shared<std::map<std::size_t, ExpertController>>();
  return [controllers, chunk](const ChunkRequest& req) {
    const std::size_t n = req.env.size();
    Tensor out({n * chunk, world::kActionDim});
    for (std::size_t j = 0; j < n; ++j) {
      auto it = controllers->find(req.env[j]);
      if (it == controllers->end()) {
        // Detour side follows the episode, like the demonstrations.
        it = controllers
                 ->emplace(req.env[j], ExpertController(tasks()[req.task[j]],
                                                        detour_mode(req.seeds[j])))
                 .first;
      }
      WorldState sim = req.states[j];
      for (std::size_t i = 0; i < chunk; ++i) {
        const auto a = it->second.act(sim);
        std::copy(a.begin(), a.end(), out.data() + (j * chunk + i) * world::kActionDim);
        step(sim, a);
      }
    }
    return out;
  };
}

ChunkPolicy zero_policy(std::size_t chunk) {
  return [chunk](const ChunkRequest& req) {
    return Tensor({req.env.size() * chunk, world::kActionDim});
  };
}

EvalResult evaluate(const Policy& policy, std::size_t trials, std::uint64_t seed) {
  return run_trials(model_policy(policy), policy.config().data_tasks, trials, seed,
                    policy.config().horizon);
}

}  // namespace lmoe::bench
