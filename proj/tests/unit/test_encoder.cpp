// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "lmoe/core/error.hpp"
#include "lmoe/core/ops.hpp"
#include "lmoe/encoder/lcvr.hpp"

using namespace lmoe;
using namespace lmoe::encoder;

namespace {

const std::vector<std::string> kTemplates = {"pick the red square", "place the blue disc",
                                             "lift the green bar and hook it"};

ObservationImage random_image(std::uint64_t seed, std::size_t size = 48) {
  Rng rng(seed);
  ObservationImage img(size, size);
  for (auto& v : img.pixels.vec()) v = rng.uniform();
  return img;
}

struct Encoder {
  ParameterStore store;
  Rng rng;
  Lcvr lcvr;
  explicit Encoder(std::uint64_t seed, LcvrConfig cfg = {})
      : rng(seed), lcvr(store, cfg, Vocabulary(kTemplates), rng) {}
};

}  // namespace

TEST_CASE("patch grid") {
  const ObservationImage img = random_image(1);
  const PatchSet ps = extract_patches(img);
  for (std::size_t i = 0; i < kLocalPatches; ++i) {
    CHECK(ps.local[i].pixels.shape() == Shape{16, 16, 3});
    const std::size_t gy = i / 3, gx = i % 3;
    CHECK(ps.local[i].at(5, 7, 2) == img.at(gy * 16 + 5, gx * 16 + 7, 2));
  }
  CHECK(ps.global.pixels.shape() == Shape{16, 16, 3});
  double mean = 0;
  for (std::size_t dy = 0; dy < 3; ++dy)
    for (std::size_t dx = 0; dx < 3; ++dx) mean += img.at(3 * 4 + dy, 3 * 2 + dx, 1) / 9.0;
  CHECK(ps.global.at(4, 2, 1) == doctest::Approx(mean).epsilon(1e-14));
}

TEST_CASE("constant image: global patch equals every local patch") {
  ObservationImage img(48, 48, 0.3);
  for (std::size_t y = 0; y < 48; ++y)
    for (std::size_t x = 0; x < 48; ++x) img.at(y, x, 1) = 0.7;
  const PatchSet ps = extract_patches(img);
  for (const auto& l : ps.local) CHECK(l.pixels == ps.global.pixels);
}

TEST_CASE("image dimensions must split into a 3x3 grid") {
  CHECK_THROWS_AS(extract_patches(ObservationImage(47, 48)), ConfigError);
  Encoder e(1);
  CHECK_THROWS_AS(e.lcvr.patch_tokens(ObservationImage(44, 44)), ConfigError);
  CHECK_THROWS_AS(e.lcvr.patch_tokens(ObservationImage(24, 24)), InvalidInput);
}

TEST_CASE("frozen patch encoder") {
  Encoder a(1), b(2);
  const ObservationImage img = random_image(3);
  SUBCASE("depends only on its own seed") {
    CHECK(a.lcvr.patch_tokens(img) == b.lcvr.patch_tokens(img));
  }
  SUBCASE("a single pixel changes the tokens") {
    ObservationImage img2 = img;
    img2.at(20, 20, 0) = 1.0 - img2.at(20, 20, 0);
    const Tensor t1 = a.lcvr.patch_tokens(img), t2 = a.lcvr.patch_tokens(img2);
    CHECK(max_abs_diff(t1, t2) > 1e-6);
    CHECK(t1.shape() == Shape{kPatchTokens, 32});
  }
  SUBCASE("is frozen") {
    for (const char* n : {"stub.w1", "stub.b1", "stub.w2"}) CHECK_FALSE(a.store.find(n)->trainable);
  }
}

TEST_CASE("fusion matches single-query attention written out") {
  LcvrConfig cfg;
  cfg.d_tok = 8;
  cfg.transformer = {8, 1, 2, 1, 16};
  Encoder e(4, cfg);
  Rng rng(11);
  const std::size_t B = 2, d = 8;
  const Tensor global = rng.normal({B, d}), local = rng.normal({B * 9, d});
  Tape tape = Tape::inference();
  const Tensor got = e.lcvr.fuse(tape, tape.constant(global), tape.constant(local), B).value();

  auto W = [&](const char* n) { return e.store.find(n)->value; };
  const Tensor wq = W("lcvr.fuse.wq"), wk = W("lcvr.fuse.wk"), wv = W("lcvr.fuse.wv"),
               wo = W("lcvr.fuse.wo"), ge = W("lcvr.grid_embed");
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<long double> q(d, 0);
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t i = 0; i < d; ++i) q[j] += global.at(b, i) * wq.at(i, j);
    std::vector<long double> s(9), att(d, 0);
    std::vector<std::vector<long double>> v(9, std::vector<long double>(d, 0));
    long double z = 0;
    for (std::size_t p = 0; p < 9; ++p) {
      long double dotqk = 0;
      for (std::size_t j = 0; j < d; ++j) {
        long double kj = 0;
        for (std::size_t i = 0; i < d; ++i) {
          const long double x = local.at(b * 9 + p, i) + ge.at(p, i);
          kj += x * wk.at(i, j);
          v[p][j] += x * wv.at(i, j);
        }
        dotqk += q[j] * kj;
      }
      s[p] = std::exp(dotqk / std::sqrt(static_cast<long double>(d)));
      z += s[p];
    }
    for (std::size_t p = 0; p < 9; ++p)
      for (std::size_t j = 0; j < d; ++j) att[j] += s[p] / z * v[p][j];
    for (std::size_t j = 0; j < d; ++j) {
      long double o = 0;
      for (std::size_t i = 0; i < d; ++i) o += att[i] * wo.at(i, j);
      CHECK(std::abs(static_cast<double>(o) - got.at(b, j)) < 1e-10);
    }
  }
}

TEST_CASE("fusion rejects a local token count other than nine") {
  Encoder e(1);
  Tape tape;
  CHECK_THROWS_AS(e.lcvr.fuse(tape, tape.constant(Tensor({1, 32})),
                              tape.constant(Tensor({8, 32})), 1),
                  InvalidInput);
}

TEST_CASE("vocabulary") {
  const Vocabulary v(kTemplates);
  CHECK(v.max_template_length() == 7);
  CHECK(v.encode("Pick the RED square") == v.encode("pick the red square"));
  const auto ids = v.encode("pick the purple square");
  CHECK(ids[2] == Vocabulary::kUnknown);
  CHECK(ids[0] != Vocabulary::kUnknown);
}

TEST_CASE("instruction conditioning") {
  Encoder e(5);
  const ObservationImage img = random_image(8);
  const Tensor z1 = e.lcvr.encode(img, kTemplates[0]);
  const Tensor z2 = e.lcvr.encode(img, kTemplates[1]);
  CHECK(z1.shape() == Shape{e.lcvr.t_z(), 32});
  CHECK(z1.all_finite());
  CHECK(max_abs_diff(z1, z2) > 1e-6);
  CHECK(e.lcvr.encode(img, kTemplates[0]) == z1);
  CHECK_THROWS_AS(e.lcvr.tokenize("   "), InvalidInput);
  // An over-long instruction is truncated to fit the sequence.
  CHECK(e.lcvr.tokenize("a b c d e f g h i j k").size() == e.lcvr.t_z() - 1);
}

TEST_CASE("training leaves the frozen encoder untouched") {
  Encoder e(6);
  const Tensor stub_before = e.store.find("stub.w1")->value;
  const Tensor wq_before = e.store.find("lcvr.fuse.wq")->value;
  const ObservationImage img = random_image(9);
  const Tensor tokens = e.lcvr.patch_tokens(img);
  const auto instr = e.lcvr.tokenize(kTemplates[2]);
  for (int it = 0; it < 5; ++it) {
    e.store.zero_grad();
    Tape tape;
    Var z = e.lcvr.forward(tape, tokens, {instr});
    tape.backward(ops::mean_all(ops::square(z)));
    for (Parameter* p : e.store.trainable()) {
      for (std::size_t i = 0; i < p->value.numel(); ++i) p->value[i] -= 0.1 * p->grad[i];
    }
  }
  CHECK(e.store.find("stub.w1")->value == stub_before);
  CHECK(max_abs_diff(e.store.find("lcvr.fuse.wq")->value, wq_before) > 0.0);
}
