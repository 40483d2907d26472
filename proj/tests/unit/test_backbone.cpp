// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <set>

#include "lmoe/core/error.hpp"
#include "lmoe/policy/backbone.hpp"

using namespace lmoe;
using namespace lmoe::policy;

TEST_CASE("timestep embedding") {
  const Tensor e0 = timestep_embed(0, 16, 100);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(e0[i] == 0.0);
    CHECK(e0[8 + i] == 1.0);
  }
  const Tensor e3 = timestep_embed(3, 16, 100);
  CHECK(e3[0] == doctest::Approx(std::sin(3.0)));
  CHECK(e3[9] == doctest::Approx(std::cos(3.0 * std::pow(10000.0, -1.0 / 8))));
  std::set<std::vector<double>> seen;
  for (std::size_t k = 0; k <= 100; ++k) seen.insert(timestep_embed(k, 16, 100).vec());
  CHECK(seen.size() == 101);
  CHECK_THROWS_AS(timestep_embed(101, 16, 100), InvalidInput);
  CHECK_THROWS_AS(timestep_embed(1, 7, 100), ConfigError);
}

TEST_CASE("condition is the pooled encoding followed by proprio") {
  Rng rng(2);
  const std::size_t B = 3, T = 5, d = 4;
  const Tensor z = rng.normal({B * T, d});
  const Tensor pr = rng.normal({B, 2});
  Tape tape = Tape::inference();
  const Tensor s = build_condition(tape, tape.constant(z), T, pr, 2).value();
  CHECK(s.shape() == Shape{B, d + 2});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < d; ++j) {
      double m = 0;
      for (std::size_t t = 0; t < T; ++t) m += z.at(b * T + t, j);
      CHECK(std::abs(s.at(b, j) - m / T) < 1e-12);
    }
    CHECK(s.at(b, d) == pr.at(b, 0));
    CHECK(s.at(b, d + 1) == pr.at(b, 1));
  }
  const Tensor s0 = build_condition(tape, tape.constant(z), T, Tensor({B, 2}), 2).value();
  for (std::size_t b = 0; b < B; ++b) CHECK(s0.at(b, d) == 0.0);
  CHECK_THROWS_AS(build_condition(tape, tape.constant(z), T, Tensor({B, 3}), 2), ConfigError);
}

namespace {

struct Fixture {
  BackboneConfig cfg;
  ParameterStore store;
  Rng rng{5};
  std::unique_ptr<Denoiser> net;
  Fixture() {
    cfg.d_tok = 8;
    cfg.horizon = 4;
    cfg.diffusion_steps = 20;
    cfg.transformer = {16, 1, 2, 1, 16};
    net = std::make_unique<Denoiser>(store, cfg, rng);
  }
  Tensor run(const Tensor& a, std::vector<std::size_t> k, const Tensor& cond) const {
    Tape tape = Tape::inference();
    return net->forward(tape, a, k, tape.constant(cond)).value();
  }
};

}  // namespace

TEST_CASE("denoiser") {
  Fixture f;
  Rng rng(7);
  const Tensor a = rng.normal({2 * 4, 4});
  const Tensor cond = rng.normal({2, 8 + 4});
  const Tensor x = f.run(a, {3, 3}, cond);
  CHECK(x.shape() == Shape{8, 16});
  CHECK(x.all_finite());
  CHECK(f.run(a, {3, 3}, cond) == x);
  SUBCASE("depends on the diffusion step") {
    CHECK(max_abs_diff(f.run(a, {4, 3}, cond), x) > 1e-6);
  }
  SUBCASE("depends on the condition") {
    Tensor c2 = cond;
    c2[0] += 0.5;
    CHECK(max_abs_diff(f.run(a, {3, 3}, c2), x) > 1e-6);
  }
  SUBCASE("sequences are independent") {
    Tensor a2 = a;
    for (std::size_t i = 16; i < 32; ++i) a2[i] += 1.0;  // second sequence only
    const Tensor y = f.run(a2, {3, 3}, cond);
    for (std::size_t i = 0; i < 4 * 16; ++i) CHECK(y[i] == x[i]);
  }
  SUBCASE("every parameter is shared") {
    for (std::size_t i = 0; i < f.store.size(); ++i) CHECK(f.store[i].is_shared());
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(f.run(rng.normal({7, 4}), {3, 3}, cond), InvalidInput);
    CHECK_THROWS_AS(f.run(a, {3, 3}, rng.normal({2, 5})), InvalidInput);
  }
}
