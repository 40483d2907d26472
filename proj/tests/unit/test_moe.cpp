// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numbers>

#include "lmoe/core/error.hpp"
#include "lmoe/core/ops.hpp"
#include "lmoe/moe/head.hpp"
#include "oracles.hpp"
#include "toy.hpp"

using namespace lmoe;
using namespace lmoe::moe;
namespace t = lmoe::testing;

namespace {

GmmParams random_gmm(Rng& rng, std::size_t L, std::size_t M, std::size_t d) {
  GmmParams p{Tensor({L, M}), Tensor({L, M, d}), Tensor({L, M, d})};
  for (std::size_t s = 0; s < L; ++s) {
    Tensor logits = rng.normal({M});
    const Tensor pi = ops::softmax(logits, 0);
    std::copy_n(pi.data(), M, p.pi.data() + s * M);
  }
  for (auto& v : p.mu.vec()) v = rng.uniform(-1, 1);
  for (auto& v : p.sigma.vec()) v = rng.uniform(0.3, 1.5);
  return p;
}

HeadConfig small_head(std::size_t experts, std::size_t components) {
  HeadConfig c;
  c.feature_dim = 6;
  c.n_experts = experts;
  c.n_components = components;
  c.d_action = 2;
  c.horizon = 3;
  c.expert_hidden = 8;
  return c;
}

}  // namespace

TEST_CASE("training routing keeps the top two") {
  const std::vector<double> g{0.5, 0.3, 0.15, 0.05};
  const GatingDecision d = route(g, RoutingMode::kTraining);
  CHECK(d.selected == std::vector<std::size_t>{0, 1});
  CHECK(d.weights[0] == doctest::Approx(0.625));
  CHECK(d.weights[1] == doctest::Approx(0.375));
}

TEST_CASE("inference routing keeps the top one") {
  const std::vector<double> g{0.1, 0.2, 0.6, 0.1};
  const GatingDecision d = route(g, RoutingMode::kInference);
  CHECK(d.selected == std::vector<std::size_t>{2});
  CHECK(d.weights == std::vector<double>{1.0});
}

TEST_CASE("routing ties go to the lower index") {
  const std::vector<double> g{0.2, 0.4, 0.4};
  CHECK(route(g, RoutingMode::kInference).selected == std::vector<std::size_t>{1});
  CHECK(route(g, RoutingMode::kTraining).selected == std::vector<std::size_t>{1, 2});
  const std::vector<double> u{0.25, 0.25, 0.25, 0.25};
  CHECK(route(u, RoutingMode::kTraining).selected == std::vector<std::size_t>{0, 1});
}

TEST_CASE("a single expert is only valid as the monolithic baseline") {
  const std::vector<double> g{1.0};
  CHECK_THROWS_AS(route(g, RoutingMode::kTraining), ConfigError);
  const GatingDecision d = route(g, RoutingMode::kTraining, true);
  CHECK(d.selected == std::vector<std::size_t>{0});
  CHECK(d.weights == std::vector<double>{1.0});
}

TEST_CASE("routing properties over random gates") {
  Rng rng(4);
  for (int it = 0; it < 500; ++it) {
    const std::size_t n = 2 + rng.uniform_int(0, 5);
    const Tensor g = ops::softmax(rng.normal({n}, 2.0), 0);
    const GatingDecision d = route(g.span(), RoutingMode::kTraining);
    REQUIRE(d.selected.size() == 2);
    CHECK(d.selected[0] != d.selected[1]);
    CHECK(d.weights[0] + d.weights[1] == doctest::Approx(1.0));
    for (std::size_t i = 0; i < n; ++i) {
      if (i != d.selected[0] && i != d.selected[1]) CHECK(g[i] <= g[d.selected[1]]);
    }
    CHECK(d.weights[0] >= d.weights[1]);
  }
}

TEST_CASE("zero log-sigma decodes to one plus the floor") {
  const std::size_t M = 2, d = 1;
  const Tensor raw({1, M * (1 + 2 * d)});
  const GmmParams p = decode_gmm(raw, M, d, 1e-4);
  CHECK(p.sigma[0] == doctest::Approx(1.0001).epsilon(1e-15));
  CHECK(p.pi[0] == doctest::Approx(0.5));
}

TEST_CASE("standard normal density") {
  // One expert, one component, mu = 0, sigma = 1, eps = 0:
  // log p = -(L d / 2) ln 2 pi.
  const std::size_t L = 3, d = 2;
  GmmParams p{Tensor({L, 1}, 1.0), Tensor({L, 1, d}), Tensor({L, 1, d}, 1.0)};
  const double lp = joint_log_density(Tensor({L, d}), {p}, std::vector<double>{1.0});
  CHECK(lp == doctest::Approx(-0.5 * L * d * std::log(2 * std::numbers::pi)).epsilon(1e-14));
}

TEST_CASE("log density matches the multiplied-out mixture") {
  Rng rng(17);
  for (int it = 0; it < 200; ++it) {
    const std::size_t L = 1 + rng.uniform_int(0, 2), M = 1 + rng.uniform_int(0, 2);
    const std::size_t d = 1 + rng.uniform_int(0, 2), k = 1 + rng.uniform_int(0, 1);
    std::vector<GmmParams> ex;
    for (std::size_t i = 0; i < k; ++i) ex.push_back(random_gmm(rng, L, M, d));
    std::vector<double> w{1.0};
    if (k == 2) {
      const double a = rng.uniform(0.05, 0.95);
      w = {a, 1 - a};
    }
    Tensor eps({L, d});
    for (auto& v : eps.vec()) v = rng.uniform(-2, 2);
    const double got = joint_log_density(eps, ex, w);
    const long double want = t::naive_mixture_log_density(eps, ex, w);
    CHECK(std::abs(got - static_cast<double>(want)) < 1e-9);
  }
}

TEST_CASE("log density survives extreme values") {
  const std::size_t L = 3, d = 4;
  GmmParams p{Tensor({L, 1}, 1.0), Tensor({L, 1, d}), Tensor({L, 1, d}, 1e-4)};
  const double lp = joint_log_density(Tensor({L, d}, 1.0), {p}, std::vector<double>{1.0});
  CHECK(std::isfinite(lp));
  CHECK(lp < -1e8);
}

TEST_CASE("sigma below the floor is rejected") {
  GmmParams p{Tensor({1, 1}, 1.0), Tensor({1, 1, 1}), Tensor({1, 1, 1}, 1e-5)};
  CHECK_THROWS_AS(joint_log_density(Tensor({1, 1}), {p}, std::vector<double>{1.0}),
                  InvariantViolation);
}

TEST_CASE("sequence log-likelihood agrees with the scalar evaluation") {
  Rng rng(21);
  const std::size_t n = 3, L = 2, M = 3, d = 2;
  const Tensor raw = rng.normal({n * L, M * (1 + 2 * d)}, 0.5);
  const Tensor eps = rng.normal({n * L, d});
  Tape tape = Tape::inference();
  const Tensor ll = gmm_sequence_loglik(tape.constant(raw), eps, L, M, d, 1e-4).value();
  for (std::size_t b = 0; b < n; ++b) {
    Tensor rows({L, raw.cols()});
    std::copy_n(raw.data() + b * L * raw.cols(), L * raw.cols(), rows.data());
    Tensor e({L, d});
    std::copy_n(eps.data() + b * L * d, L * d, e.data());
    const double want = joint_log_density(e, {decode_gmm(rows, M, d, 1e-4)}, std::vector<double>{1.0});
    CHECK(ll[b] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("auxiliary loss") {
  SUBCASE("collapsed routing") {
    std::vector<GatingDecision> batch;
    for (int i = 0; i < 8; ++i) {
      GatingDecision d;
      d.g = {1, 0, 0, 0};
      d.selected = {0};
      batch.push_back(d);
    }
    CHECK(aux_loss(batch, 0.01, 0.02) == doctest::Approx(3 * (0.01 + 0.02)));
  }
  SUBCASE("perfectly balanced routing") {
    std::vector<GatingDecision> batch;
    for (std::size_t i = 0; i < 4; ++i) {
      GatingDecision d;
      d.g = {0.25, 0.25, 0.25, 0.25};
      d.selected = {i};
      batch.push_back(d);
    }
    CHECK(aux_loss(batch, 1.0, 1.0) == doctest::Approx(0.0));
  }
}

TEST_CASE("head training terms") {
  Rng rng(6);
  ParameterStore store;
  const HeadConfig cfg = small_head(4, 3);
  MoeMdnHead head(store, cfg, rng);
  const std::size_t B = 5;
  const Tensor x = rng.normal({B * 3, 6});
  const Tensor eps = rng.normal({B * 3, 2});
  Tape tape;
  const auto terms = head.training_terms(tape, tape.constant(x), eps, B);
  CHECK(terms.k == 2);
  CHECK(terms.slot_loglik.shape() == Shape{B, 2});
  CHECK(terms.slot_nll.size() == 2);
  // Mixture NLL against the scalar density of each sequence.
  double nll = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    Tensor xb({3, 6}), eb({3, 2});
    std::copy_n(x.data() + b * 18, 18, xb.data());
    std::copy_n(eps.data() + b * 6, 6, eb.data());
    const auto& dec = terms.decisions[b];
    std::vector<GmmParams> ex;
    for (std::size_t e : dec.selected) ex.push_back(head.expert_forward(e, xb));
    nll -= joint_log_density(eb, ex, dec.weights);
    CHECK(head.gate(xb, RoutingMode::kTraining).selected == dec.selected);
  }
  CHECK(terms.mixture_nll.value().item() == doctest::Approx(nll / B).epsilon(1e-12));
  // Gating probabilities of every sequence sum to one.
  const Tensor& g = terms.gate_probs.value();
  for (std::size_t b = 0; b < B; ++b) {
    double s = 0;
    for (std::size_t e = 0; e < 4; ++e) s += g.at(b, e);
    CHECK(s == doctest::Approx(1.0));
  }
}

TEST_CASE("inference runs only the routed expert, fed its argmax component mean") {
  Rng rng(8);
  ParameterStore store;
  const HeadConfig cfg = small_head(3, 2);
  MoeMdnHead head(store, cfg, rng);
  const std::size_t B = 4;
  const Tensor x = rng.normal({B * 3, 6});
  // Poison every expert that the gate will not choose: outputs must not move.
  std::vector<GatingDecision> dec;
  const Tensor eps = head.predict_noise(x, B, &dec);
  REQUIRE(dec.size() == B);
  std::vector<bool> used(3, false);
  for (const auto& d : dec) {
    CHECK(d.selected.size() == 1);
    used[d.selected[0]] = true;
  }
  for (std::size_t e = 0; e < 3; ++e) {
    if (used[e]) continue;
    for (const char* s : {".w1", ".w2"}) {
      auto& p = store.find("expert" + std::to_string(e) + s)->value;
      for (auto& v : p.vec()) v = std::nan("");
    }
  }
  CHECK(head.predict_noise(x, B) == eps);
  for (std::size_t b = 0; b < B; ++b) {
    Tensor xb({3, 6});
    std::copy_n(x.data() + b * 18, 18, xb.data());
    const GmmParams p = head.expert_forward(dec[b].selected[0], xb);
    for (std::size_t t2 = 0; t2 < 3; ++t2) {
      const std::size_t m = p.pi[t2 * 2 + 1] > p.pi[t2 * 2] ? 1 : 0;
      for (std::size_t j = 0; j < 2; ++j) {
        // Batched and per-sequence products may round differently.
        CHECK(eps.at(b * 3 + t2, j) == doctest::Approx(p.mu[(t2 * 2 + m) * 2 + j]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("more components capture a two-mode target") {
  const t::ToyFit m1 = t::fit_bimodal(1, 600, 3);
  const t::ToyFit m3 = t::fit_bimodal(3, 600, 3);
  CAPTURE(m1.eval_nll);
  CAPTURE(m3.eval_nll);
  CHECK(m3.eval_nll <= m1.eval_nll - 0.5);
}
