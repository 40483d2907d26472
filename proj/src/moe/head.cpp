// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "lmoe/moe/head.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lmoe/core/error.hpp"
#include "lmoe/core/ops.hpp"
#include "lmoe/core/transformer.hpp"

namespace lmoe::moe {
namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

double lse(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

double cv2(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (mean == 0.0) return 0.0;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  return var / (mean * mean);
}

}  // namespace

GatingDecision route(std::span<const double> g, RoutingMode mode, bool monolithic) {
  const std::size_t n = g.size();
  if (n == 0) throw InvalidInput("route: empty gate distribution");
  GatingDecision d;
  d.g.assign(g.begin(), g.end());
  d.mode = mode;
  if (n == 1) {
    if (!monolithic && mode == RoutingMode::kTraining) {
      throw ConfigError("route: top-2 training needs at least 2 experts");
    }
    d.selected = {0};
    d.weights = {1.0};
    return d;
  }
  const std::size_t k = mode == RoutingMode::kTraining ? 2 : 1;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  // Stable sort keeps the lower index first on ties.
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return g[a] > g[b]; });
  d.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  double z = 0.0;
  for (std::size_t i : d.selected) z += g[i];
  for (std::size_t i : d.selected) d.weights.push_back(g[i] / z);
  return d;
}

double joint_log_density(const Tensor& eps, const std::vector<GmmParams>& experts,
                         std::span<const double> weights, double sigma_min) {
  if (experts.empty() || experts.size() != weights.size()) {
    throw InvalidInput("joint_log_density: need one weight per active expert");
  }
  const std::size_t L = eps.dim(0), d = eps.dim(1);
  std::vector<double> per_expert;
  for (std::size_t i = 0; i < experts.size(); ++i) {
    const GmmParams& p = experts[i];
    const std::size_t M = p.components();
    if (p.steps() != L || p.dim() != d) {
      throw InvalidInput("joint_log_density: parameter shape mismatch");
    }
    double seq = 0.0;
    std::vector<double> comp(M);
    for (std::size_t t = 0; t < L; ++t) {
      for (std::size_t m = 0; m < M; ++m) {
        double lp = std::log(p.pi[t * M + m]);
        for (std::size_t j = 0; j < d; ++j) {
          const std::size_t idx = (t * M + m) * d + j;
          const double s = p.sigma[idx];
          if (!(s >= sigma_min)) {
            throw InvariantViolation("joint_log_density: sigma " + std::to_string(s) +
                                     " below sigma_min");
          }
          const double z = (eps[t * d + j] - p.mu[idx]) / s;
          lp += -0.5 * z * z - std::log(s) - kHalfLog2Pi;
        }
        comp[m] = lp;
      }
      seq += lse(comp);
    }
    per_expert.push_back(std::log(weights[i]) + seq);
  }
  return lse(per_expert);
}

double aux_loss(const std::vector<GatingDecision>& batch, double alpha, double beta) {
  if (batch.empty()) throw InvalidInput("aux_loss: empty batch");
  const std::size_t n = batch.front().g.size();
  std::vector<double> importance(n, 0.0), load(n, 0.0);
  for (const auto& d : batch) {
    if (d.g.size() != n) throw InvalidInput("aux_loss: inconsistent expert count");
    for (std::size_t i = 0; i < n; ++i) importance[i] += d.g[i];
    for (std::size_t i : d.selected) load[i] += 1.0;
  }
  return alpha * cv2(load) + beta * cv2(importance);
}

Var gmm_sequence_loglik(Var raw, const Tensor& eps, std::size_t steps,
                        std::size_t components, std::size_t dim, double sigma_min) {
  Tape& tape = *raw.tape;
  const std::size_t M = components, d = dim;
  const std::size_t rows = raw.value().rows();
  if (raw.value().cols() != M * (1 + 2 * d) || eps.rows() != rows || eps.cols() != d ||
      rows % steps != 0) {
    throw InvalidInput("gmm_sequence_loglik: raw " + shape_str(raw.shape()) + " / eps " +
                       shape_str(eps.shape()) + " mismatch");
  }
  const std::size_t n = rows / steps;
  Var log_pi = ops::log_softmax(ops::slice_cols(raw, 0, M));                            // [rows, M]
  Var mu = ops::reshape(ops::slice_cols(raw, M, M + M * d), {rows * M, d});
  Var log_sigma_raw = ops::reshape(ops::slice_cols(raw, M + M * d, M + 2 * M * d), {rows * M, d});
  Var sigma = ops::add_scalar(ops::exp(log_sigma_raw), sigma_min);
  const Tensor& sv = sigma.value();
  for (std::size_t i = 0; i < sv.numel(); ++i) {
    if (!(sv[i] >= sigma_min)) throw InvariantViolation("gmm: sigma below sigma_min");
  }
  Tensor eps_rep({rows * M, d});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t m = 0; m < M; ++m) {
      std::copy_n(eps.data() + r * d, d, eps_rep.data() + (r * M + m) * d);
    }
  }
  Var z = ops::div(ops::sub(tape.constant(std::move(eps_rep)), mu), sigma);
  Var per_dim = ops::sub(ops::scale(ops::square(z), -0.5), ops::log(sigma));
  Var log_n = ops::add_scalar(ops::sum_last(per_dim), -static_cast<double>(d) * kHalfLog2Pi);
  Var comp = ops::add(log_pi, ops::reshape(log_n, {rows, M}));
  Var per_step = ops::log_sum_exp(comp);  // [rows]
  return ops::sum_last(ops::reshape(per_step, {n, steps}));
}

GmmParams decode_gmm(const Tensor& raw, std::size_t components, std::size_t dim,
                     double sigma_min) {
  const std::size_t M = components, d = dim, L = raw.rows();
  if (raw.cols() != M * (1 + 2 * d)) throw InvalidInput("decode_gmm: raw width");
  GmmParams p{Tensor({L, M}), Tensor({L, M, d}), Tensor({L, M, d})};
  for (std::size_t t = 0; t < L; ++t) {
    const double* row = raw.data() + t * raw.cols();
    Tensor logits({M}, std::vector<double>(row, row + M));
    const Tensor pi = ops::softmax(logits, 0);
    std::copy_n(pi.data(), M, p.pi.data() + t * M);
    for (std::size_t j = 0; j < M * d; ++j) {
      p.mu[t * M * d + j] = row[M + j];
      p.sigma[t * M * d + j] = std::exp(row[M + M * d + j]) + sigma_min;
    }
  }
  return p;
}

MoeMdnHead::MoeMdnHead(ParameterStore& store, const HeadConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.n_experts == 0 || cfg.n_components == 0) {
    throw ConfigError("moe head: need at least one expert and one component");
  }
  w_gate_ = &store.add("gate.w", rng.normal({cfg.feature_dim, cfg.n_experts}, 0.01),
                       Partition::kGating);
  for (std::size_t e = 0; e < cfg.n_experts; ++e) {
    const std::string p = "expert" + std::to_string(e) + ".";
    const int owner = static_cast<int>(e);
    Expert ex{};
    ex.w1 = &store.add(p + "w1", init_weight(rng, cfg.feature_dim, cfg.expert_hidden),
                       Partition::kExpert, owner);
    ex.b1 = &store.add(p + "b1", Tensor({cfg.expert_hidden}), Partition::kExpert, owner);
    ex.w2 = &store.add(p + "w2", init_weight(rng, cfg.expert_hidden, raw_width(), 0.1),
                       Partition::kExpert, owner);
    // Component means start spread over [-1, 1]; identical means sit on a
    // saddle that gradient descent leaves only very slowly.
    Tensor b2({raw_width()});
    const std::size_t M = cfg.n_components, d = cfg.d_action;
    for (std::size_t m = 0; M > 1 && m < M; ++m) {
      for (std::size_t j = 0; j < d; ++j) b2[M + m * d + j] = -1.0 + 2.0 * m / double(M - 1);
    }
    ex.b2 = &store.add(p + "b2", std::move(b2), Partition::kExpert, owner);
    experts_.push_back(ex);
  }
}

Var MoeMdnHead::gate_probs(Tape& tape, Var x_feat, std::size_t batch) const {
  Var x_seq = ops::mean_groups(x_feat, x_feat.value().rows() / batch);
  return ops::softmax(ops::linear(x_seq, tape.param(*w_gate_)));
}

GatingDecision MoeMdnHead::gate(const Tensor& x_feat, RoutingMode mode) const {
  if (x_feat.rank() != 2 || x_feat.cols() != cfg_.feature_dim) {
    throw InvalidInput("gate: X_feat must be (L, D)");
  }
  Tape tape = Tape::inference();
  Var g = gate_probs(tape, tape.constant(x_feat), 1);
  return route(g.value().span(), mode, monolithic());
}

Var MoeMdnHead::expert_raw(Tape& tape, std::size_t expert, Var rows) const {
  if (expert >= experts_.size()) throw InvalidInput("expert index out of range");
  const Expert& ex = experts_[expert];
  Var h = ops::silu(ops::linear(rows, tape.param(*ex.w1), tape.param(*ex.b1)));
  return ops::linear(h, tape.param(*ex.w2), tape.param(*ex.b2));
}

GmmParams MoeMdnHead::expert_forward(std::size_t expert, const Tensor& x_feat) const {
  Tape tape = Tape::inference();
  Var raw = expert_raw(tape, expert, tape.constant(x_feat));
  return decode_gmm(raw.value(), cfg_.n_components, cfg_.d_action, cfg_.sigma_min);
}

TrainingTerms MoeMdnHead::training_terms(Tape& tape, Var x_feat, const Tensor& eps,
                                         std::size_t batch) const {
  const std::size_t L = cfg_.horizon, N = cfg_.n_experts, d = cfg_.d_action;
  if (x_feat.value().rows() != batch * L || eps.rows() != batch * L || eps.cols() != d) {
    throw InvalidInput("training_terms: shape mismatch");
  }
  TrainingTerms out;
  Var x_seq = ops::mean_groups(x_feat, L);
  Var log_g = ops::log_softmax(ops::linear(x_seq, tape.param(*w_gate_)));  // [B, N]
  out.gate_probs = ops::exp(log_g);
  const Tensor& gv = out.gate_probs.value();
  for (std::size_t b = 0; b < batch; ++b) {
    out.decisions.push_back(route(std::span<const double>(gv.data() + b * N, N),
                                  RoutingMode::kTraining, monolithic()));
  }
  const std::size_t k = out.decisions.front().selected.size();
  out.k = k;

  // Run each expert only on the sequences that selected it.
  std::vector<Var> pieces;
  std::vector<std::vector<std::size_t>> flat_pos(N, std::vector<std::size_t>(batch, 0));
  std::size_t offset = 0;
  for (std::size_t e = 0; e < N; ++e) {
    std::vector<std::size_t> members;
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& s = out.decisions[b].selected;
      if (std::find(s.begin(), s.end(), e) != s.end()) members.push_back(b);
    }
    if (members.empty()) continue;
    std::vector<std::size_t> rows;
    Tensor eps_e({members.size() * L, d});
    for (std::size_t j = 0; j < members.size(); ++j) {
      for (std::size_t t = 0; t < L; ++t) rows.push_back(members[j] * L + t);
      std::copy_n(eps.data() + members[j] * L * d, L * d, eps_e.data() + j * L * d);
      flat_pos[e][members[j]] = offset + j;
    }
    Var raw = expert_raw(tape, e, ops::gather_rows(x_feat, rows));
    Var ll = gmm_sequence_loglik(raw, eps_e, L, cfg_.n_components, d, cfg_.sigma_min);
    pieces.push_back(ops::reshape(ll, {members.size(), 1}));
    offset += members.size();
  }
  Var flat = ops::concat_rows(pieces);
  std::vector<std::size_t> order, gate_idx;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t e : out.decisions[b].selected) {
      order.push_back(flat_pos[e][b]);
      gate_idx.push_back(b * N + e);
    }
  }
  out.slot_loglik = ops::reshape(ops::gather_rows(flat, order), {batch, k});
  Var log_sel = ops::reshape(ops::gather_rows(ops::reshape(log_g, {batch * N, 1}), gate_idx),
                             {batch, k});
  out.log_weights = ops::log_softmax(log_sel);
  out.mixture_nll =
      ops::neg(ops::mean_all(ops::log_sum_exp(ops::add(out.log_weights, out.slot_loglik))));

  Tensor mask({batch, N});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t e : out.decisions[b].selected) mask[b * N + e] = 1.0;
  }
  Var importance = ops::sum_rows(out.gate_probs);
  Var load = ops::sum_rows(ops::mul_const(out.gate_probs, mask));
  out.aux = ops::add(ops::scale(ops::cv_squared(load), cfg_.aux_alpha),
                     ops::scale(ops::cv_squared(importance), cfg_.aux_beta));
  for (std::size_t r = 0; r < k; ++r) {
    out.slot_nll.push_back(ops::neg(ops::mean_all(ops::slice_cols(out.slot_loglik, r, r + 1))));
  }
  return out;
}

Tensor MoeMdnHead::predict_noise(const Tensor& x_feat, std::size_t batch,
                                 std::vector<GatingDecision>* decisions) const {
  const std::size_t L = cfg_.horizon, N = cfg_.n_experts, d = cfg_.d_action;
  const std::size_t M = cfg_.n_components;
  if (x_feat.rows() != batch * L || x_feat.cols() != cfg_.feature_dim) {
    throw InvalidInput("predict_noise: X_feat shape " + shape_str(x_feat.shape()));
  }
  Tape tape = Tape::inference();
  Var xf = tape.constant(x_feat.reshaped({batch * L, cfg_.feature_dim}));
  const Tensor gv = gate_probs(tape, xf, batch).value();
  std::vector<GatingDecision> routes;
  for (std::size_t b = 0; b < batch; ++b) {
    routes.push_back(route(std::span<const double>(gv.data() + b * N, N),
                           RoutingMode::kInference, monolithic()));
  }
  Tensor eps({batch * L, d});
  for (std::size_t e = 0; e < N; ++e) {
    std::vector<std::size_t> members;
    for (std::size_t b = 0; b < batch; ++b) {
      if (routes[b].selected[0] == e) members.push_back(b);
    }
    if (members.empty()) continue;
    std::vector<std::size_t> rows;
    for (std::size_t b : members) {
      for (std::size_t t = 0; t < L; ++t) rows.push_back(b * L + t);
    }
    const Tensor raw = expert_raw(tape, e, ops::gather_rows(xf, rows)).value();
    const std::size_t w = raw.cols();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const double* row = raw.data() + r * w;
      // argmax of the mixing logits equals argmax of pi; first index wins ties.
      std::size_t best = 0;
      for (std::size_t m = 1; m < M; ++m) {
        if (row[m] > row[best]) best = m;
      }
      std::copy_n(row + M + best * d, d, eps.data() + rows[r] * d);
    }
  }
  if (decisions) *decisions = std::move(routes);
  return eps;
}

}  // namespace lmoe::moe
