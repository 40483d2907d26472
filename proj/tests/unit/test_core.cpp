// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "lmoe/core/error.hpp"
#include "lmoe/core/ops.hpp"
#include "lmoe/core/rng.hpp"
#include "lmoe/core/transformer.hpp"
#include "oracles.hpp"

using namespace lmoe;
namespace t = lmoe::testing;

TEST_CASE("softmax of equal logits is uniform") {
  const Tensor p = ops::softmax(Tensor::vector({0, 0, 0}), 0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(1.0 / 3).epsilon(1e-15));
}

TEST_CASE("softmax of [0, ln 3]") {
  const Tensor p = ops::softmax(Tensor::vector({0, std::log(3.0)}), 0);
  CHECK(p[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("log-sum-exp does not overflow") {
  const Tensor l = ops::log_sum_exp(Tensor({1, 2}, {1000, 1000}), 1);
  CHECK(std::isfinite(l[0]));
  CHECK(l[0] == doctest::Approx(1000 + std::log(2.0)).epsilon(1e-15));
  const Tensor m = ops::log_sum_exp(Tensor({1, 2}, {-INFINITY, -INFINITY}), 1);
  CHECK(std::isinf(m[0]));
  CHECK(m[0] < 0);
}

TEST_CASE("rms norm of [3, 4]") {
  Tape tape;
  Var y = ops::rms_norm(tape.constant(Tensor({1, 2}, {3, 4})),
                        tape.constant(Tensor({2}, 1.0)), 1e-12);
  CHECK(y.value()[0] == doctest::Approx(0.848528137).epsilon(1e-8));
  CHECK(y.value()[1] == doctest::Approx(1.131370850).epsilon(1e-8));
}

TEST_CASE("rope") {
  Rng rng(3);
  const std::size_t H = 2, hd = 8;
  const Tensor q = rng.normal({1, H * hd}), k = rng.normal({1, H * hd});
  auto rot = [&](const Tensor& x, double pos) {
    Tape tape = Tape::inference();
    return ops::rope(tape.constant(x), {pos}, H).value();
  };
  SUBCASE("position zero is the identity") { CHECK(max_abs_diff(rot(q, 0), q) == 0.0); }
  SUBCASE("matches the rotation oracle") {
    const auto want = t::naive_rope(q.vec(), 7.0, H);
    CHECK(max_abs_diff(rot(q, 7), Tensor({1, H * hd}, want)) < 1e-12);
  }
  SUBCASE("preserves every pair's norm") {
    const Tensor r = rot(q, 11);
    for (std::size_t i = 0; i < H * hd; i += 2) {
      CHECK(std::hypot(r[i], r[i + 1]) ==
            doctest::Approx(std::hypot(q[i], q[i + 1])).epsilon(1e-13));
    }
  }
  SUBCASE("scores depend on relative position only") {
    for (std::size_t h = 0; h < H; ++h) {
      auto head_dot = [&](const Tensor& a, const Tensor& b) {
        double s = 0;
        for (std::size_t c = 0; c < hd; ++c) s += a[h * hd + c] * b[h * hd + c];
        return s;
      };
      CHECK(std::abs(head_dot(rot(q, 5), rot(k, 3)) - head_dot(rot(q, 2), rot(k, 0))) < 1e-10);
    }
  }
  SUBCASE("rows take their own positions") {
    Tensor two({2, H * hd});
    std::copy_n(q.data(), H * hd, two.data());
    std::copy_n(q.data(), H * hd, two.data() + H * hd);
    Tape tape = Tape::inference();
    const Tensor r = ops::rope(tape.constant(two), {0, 4}, H).value();
    CHECK(std::equal(q.data(), q.data() + H * hd, r.data()));
    const Tensor r4 = rot(q, 4);
    CHECK(std::equal(r4.data(), r4.data() + H * hd, r.data() + H * hd));
  }
}

TEST_CASE("grouped attention") {
  Rng rng(5);
  const std::size_t B = 2, Tq = 3, Tk = 4, H = 4, hd = 4;
  SUBCASE("groups = heads equals multi-head attention") {
    const Tensor q = rng.normal({B * Tq, H * hd}), k = rng.normal({B * Tk, H * hd}),
                 v = rng.normal({B * Tk, H * hd});
    Tape tape = Tape::inference();
    const Tensor got = ops::gqa_attention(tape.constant(q), tape.constant(k), tape.constant(v),
                                          {B, Tq, Tk, H, H})
                           .value();
    CHECK(max_abs_diff(got, t::naive_attention(q, k, v, B, Tq, Tk, H, H)) < 1e-10);
  }
  SUBCASE("shared kv heads") {
    const std::size_t G = 2;
    const Tensor q = rng.normal({B * Tq, H * hd}), k = rng.normal({B * Tk, G * hd}),
                 v = rng.normal({B * Tk, G * hd});
    Tape tape = Tape::inference();
    const Tensor got = ops::gqa_attention(tape.constant(q), tape.constant(k), tape.constant(v),
                                          {B, Tq, Tk, H, G})
                           .value();
    CHECK(max_abs_diff(got, t::naive_attention(q, k, v, B, Tq, Tk, H, G)) < 1e-10);
  }
  SUBCASE("heads not divisible by groups is rejected") {
    Tape tape;
    Var q = tape.constant(Tensor({1, 6}));
    Var kv = tape.constant(Tensor({1, 4}));
    CHECK_THROWS_AS(ops::gqa_attention(q, kv, kv, {1, 1, 1, 3, 2}), Error);
  }
}

TEST_CASE("backward of x^2 at 3") {
  ParameterStore store;
  Parameter& x = store.add("x", Tensor::scalar(3.0), Partition::kShared);
  Tape tape;
  tape.backward(ops::sum_all(ops::square(tape.param(x))));
  CHECK(x.grad[0] == doctest::Approx(6.0));
}

TEST_CASE("softmax cross-entropy gradient is p - onehot") {
  ParameterStore store;
  Parameter& z = store.add("z", Tensor::vector({0.3, -1.2, 2.0, 0.1}), Partition::kShared);
  Tape tape;
  Var lp = ops::log_softmax(ops::reshape(tape.param(z), {1, 4}));
  Tensor onehot({1, 4});
  onehot[2] = 1.0;
  Var loss = ops::neg(ops::sum_all(ops::mul_const(lp, onehot)));
  tape.backward(loss);
  const Tensor p = ops::softmax(z.value, 0);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(z.grad[i] == doctest::Approx(p[i] - (i == 2 ? 1.0 : 0.0)).epsilon(1e-12));
  }
}

TEST_CASE("backward discards adjoints of earlier calls on the same tape") {
  ParameterStore store;
  Parameter& x = store.add("x", Tensor::scalar(2.0), Partition::kShared);
  Tape tape;
  Var v = tape.param(x);
  Var a = ops::square(v), b = ops::scale(v, 5.0);
  tape.backward(ops::sum_all(a));
  CHECK(x.grad[0] == doctest::Approx(4.0));
  x.zero_grad();
  tape.backward(ops::sum_all(b));
  CHECK(x.grad[0] == doctest::Approx(5.0));
}

TEST_CASE("frozen parameters receive no gradient") {
  ParameterStore store;
  Parameter& w = store.add("w", Tensor::scalar(2.0), Partition::kShared, -1, false);
  Parameter& x = store.add("x", Tensor::scalar(3.0), Partition::kShared);
  Tape tape;
  tape.backward(ops::sum_all(ops::mul(tape.param(w), tape.param(x))));
  CHECK(w.grad[0] == 0.0);
  CHECK(x.grad[0] == doctest::Approx(2.0));
  CHECK(store.trainable().size() == 1);
}

TEST_CASE("partitions") {
  ParameterStore store;
  store.add("a", Tensor({2}), Partition::kShared);
  store.add("g", Tensor({3}), Partition::kGating);
  store.add("e0", Tensor({4}), Partition::kExpert, 0);
  store.add("e1", Tensor({5}), Partition::kExpert, 1);
  CHECK(store.shared().size() == 2);
  CHECK(store.shared_count() == 5);
  CHECK(store.expert_owned(1).size() == 1);
  CHECK(store.expert_owned().size() == 2);
  CHECK_THROWS_AS(store.add("a", Tensor({1}), Partition::kShared), Error);
}

// Random compositions of the differentiable primitives.
TEST_CASE("random graphs match finite differences") {
  for (std::uint64_t seed = 0; seed < 120; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    const std::size_t R = 2 + rng.uniform_int(0, 2), C = 2 + 2 * rng.uniform_int(0, 1);
    ParameterStore store;
    Parameter& x = store.add("x", rng.normal({R, C}), Partition::kShared);
    Parameter& w = store.add("w", rng.normal({C, C}, 0.5), Partition::kShared);
    Parameter& b = store.add("b", rng.normal({C}, 0.5), Partition::kShared);
    Parameter& gain = store.add("gain", Tensor({C}, 1.0), Partition::kShared);
    const std::size_t op = seed % 6;
    const Tensor mask = rng.normal({R, C});
    auto build = [&](Tape& tape) {
      Var h = ops::linear(tape.param(x), tape.param(w), tape.param(b));
      switch (op) {
        case 0: h = ops::tanh(h); break;
        case 1: h = ops::silu(ops::rms_norm(h, tape.param(gain), 1e-6)); break;
        case 2: h = ops::log_softmax(h); break;
        case 3: h = ops::rope(h, std::vector<double>(R, 1.5), 1); break;
        case 4: {
          Var e = ops::add_scalar(ops::exp(ops::scale(h, 0.3)), 0.1);
          h = ops::div(ops::log(e), ops::add_scalar(ops::square(h), 1.0));
          break;
        }
        default: {
          Var a = ops::gqa_attention(h, tape.param(x), tape.param(x), {1, R, R, 1, 1});
          h = ops::add(a, h);
          break;
        }
      }
      Var s = ops::sum_all(ops::mul_const(h, mask));
      return ops::add(s, ops::sum_all(ops::log_sum_exp(h)));
    };
    const auto err = t::gradient_check(build, store.trainable());
    for (const auto& [g, e] : err) {
      CAPTURE(g);
      CHECK(e < 1e-6);
    }
  }
}

TEST_CASE("cv squared") {
  Tape tape;
  CHECK(ops::cv_squared(tape.constant(Tensor::vector({1, 1, 1}))).value().item() == 0.0);
  CHECK(ops::cv_squared(tape.constant(Tensor::vector({0, 0}))).value().item() == 0.0);
  // one-hot over four entries: var = 3/16, mean^2 = 1/16
  CHECK(ops::cv_squared(tape.constant(Tensor::vector({1, 0, 0, 0}))).value().item() ==
        doctest::Approx(3.0));
}

TEST_CASE("rng is reproducible") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
  Rng c(42);
  Rng f1 = c.fork(1), f2 = Rng(42).fork(1);
  CHECK(f1.next_u64() == f2.next_u64());
}

TEST_CASE("tensor reshape validates element count") {
  Tensor x({2, 3});
  CHECK(x.reshaped({3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS_AS(x.reshaped({4, 2}), InvalidInput);
}

TEST_CASE("transformer output is finite and deterministic") {
  Rng r1(9), r2(9);
  ParameterStore s1, s2;
  TransformerConfig cfg{8, 2, 2, 1, 16};
  Transformer a(s1, "t", cfg, Partition::kShared, r1), b(s2, "t", cfg, Partition::kShared, r2);
  Rng rx(1);
  const Tensor x = rx.normal({2 * 5, 8});
  Tape ta = Tape::inference(), tb = Tape::inference();
  const Tensor ya = a.forward(ta, ta.constant(x), 2, 5).value();
  const Tensor yb = b.forward(tb, tb.constant(x), 2, 5).value();
  CHECK(ya.all_finite());
  CHECK(ya == yb);
}
