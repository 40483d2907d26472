// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "lmoe/core/autodiff.hpp"
#include "lmoe/core/tensor.hpp"

// Differentiable primitives. Matrix-shaped ops treat a tensor as rows of its
// trailing axis; see Tensor::rows()/cols().
namespace lmoe::ops {

// ---- plain tensor kernels -------------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
// Reduces `axis` away. Entries may be -inf; an all -inf slice gives -inf.
Tensor log_sum_exp(const Tensor& x, std::size_t axis);

// ---- elementwise ----------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var neg(Var a);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var silu(Var a);
Var square(Var a);
// Elementwise product with a constant tensor of the same shape.
Var mul_const(Var a, const Tensor& c);
// x[N, D] + y[P, D] with N % P == 0; row r of x receives row r % P of y.
Var add_broadcast(Var x, Var y);

// ---- reductions -----------------------------------------------------------

Var sum_all(Var a);
Var mean_all(Var a);
Var sum_last(Var a);                          // drops the trailing axis
Var sum_rows(Var a);                          // 2-D column sums -> [C]
Var mean_groups(Var a, std::size_t group);    // [G*T, D] -> [G, D]

// ---- structure ------------------------------------------------------------

Var reshape(Var a, Shape shape);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
// For each group of `group` consecutive rows keep rows [begin, begin+len).
Var slice_groups(Var a, std::size_t group, std::size_t begin, std::size_t len);
// Interleave per-group row blocks: group b of the output is the concatenation
// of group b of every part. parts[i] has rows_per_group[i] rows per group.
Var concat_groups(const std::vector<Var>& parts,
                  const std::vector<std::size_t>& rows_per_group);
Var concat_rows(const std::vector<Var>& parts);
// [N, c1] ++ [N, c2] -> [N, c1 + c2]
Var concat_cols(Var a, Var b);
Var gather_rows(Var a, const std::vector<std::size_t>& rows);

// ---- network primitives ---------------------------------------------------

// x[N, in] @ w[in, out] + b[out]; pass an invalid Var for no bias.
Var linear(Var x, Var w, Var b = {});
Var softmax(Var x);        // trailing axis
Var log_softmax(Var x);    // trailing axis
Var log_sum_exp(Var x);    // trailing axis, dropped
Var rms_norm(Var x, Var gain, double eps);

// Rotary embedding on x[G*T, H*head_dim] with one position per sequence row.
// Consecutive pairs (2i, 2i+1) of each head are rotated by pos * base^(-2i/hd).
Var rope(Var x, const std::vector<double>& positions, std::size_t n_heads,
         double base = 10000.0);

struct AttentionShape {
  std::size_t batch = 1;
  std::size_t q_len = 1;
  std::size_t kv_len = 1;
  std::size_t n_heads = 1;
  std::size_t n_kv_groups = 1;
};

// Scaled dot-product attention with grouped key/value heads.
// q[B*Tq, H*hd], k/v[B*Tk, G*hd]; query head h reads kv head h / (H/G).
// `mask`, when non-empty, is a Tq*Tk row-major list of allowed positions.
Var gqa_attention(Var q, Var k, Var v, const AttentionShape& shape,
                  const std::vector<bool>& mask = {});

// Squared coefficient of variation var(v)/mean(v)^2 of a 1-D vector
// (population variance). Zero when the mean is zero.
Var cv_squared(Var v);

}  // namespace lmoe::ops
