// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "lmoe/core/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "lmoe/core/error.hpp"

namespace lmoe::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Tape& same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw InvalidInput("ops: operands on different tapes");
  return *a.tape;
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw InvalidInput(std::string(op) + ": shape mismatch " +
                       shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw InvalidInput("axis out of range");
  AxisSplit a{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

// Elementwise unary op; dfdx(x, y) is the local derivative.
template <class F, class D>
Var unary(Var a, F f, D dfdx) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = f(x[i]);
  const int ia = a.id;
  return a.tape->push(std::move(y), {ia}, [ia, dfdx](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(self);
    Tensor* ga = t.accum(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * dfdx(x[i], y[i]);
  });
}

}  // namespace

// ---- kernels ---------------------------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (!x.all_finite()) throw InvalidInput("softmax: non-finite input");
  const auto [outer, len, inner] = split_axis(x.shape(), axis);
  if (len == 0) throw InvalidInput("softmax: empty axis");
  Tensor y(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double m = kNegInf;
      for (std::size_t a = 0; a < len; ++a) m = std::max(m, x[base + a * inner]);
      double s = 0.0;
      for (std::size_t a = 0; a < len; ++a) {
        const double e = std::exp(x[base + a * inner] - m);
        y[base + a * inner] = e;
        s += e;
      }
      for (std::size_t a = 0; a < len; ++a) y[base + a * inner] /= s;
    }
  }
  return y;
}

Tensor log_sum_exp(const Tensor& x, std::size_t axis) {
  const auto [outer, len, inner] = split_axis(x.shape(), axis);
  if (len == 0) throw InvalidInput("log_sum_exp: empty reduction axis");
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (i != axis) out_shape.push_back(x.dim(i));
  }
  if (out_shape.empty()) out_shape = {1};
  Tensor y(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double m = kNegInf;
      for (std::size_t a = 0; a < len; ++a) m = std::max(m, x[base + a * inner]);
      if (std::isnan(m)) throw InvalidInput("log_sum_exp: NaN input");
      if (m == kNegInf || std::isinf(m)) {
        y[o * inner + in] = m;
        continue;
      }
      double s = 0.0;
      for (std::size_t a = 0; a < len; ++a) s += std::exp(x[base + a * inner] - m);
      y[o * inner + in] = m + std::log(s);
    }
  }
  return y;
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  if (!x.all_finite()) throw InvalidInput("log_softmax: non-finite input");
  const auto [outer, len, inner] = split_axis(x.shape(), axis);
  const Tensor lse = log_sum_exp(x, axis);
  Tensor y(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      for (std::size_t a = 0; a < len; ++a) {
        y[base + a * inner] = x[base + a * inner] - lse[o * inner + in];
      }
    }
  }
  return y;
}

// ---- elementwise -----------------------------------------------------------

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("add", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += bv[i];
  const int ia = a.id, ib = b.id;
  return t.push(std::move(y), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    for (int id : {ia, ib}) {
      if (Tensor* gi = t.accum(id)) {
        for (std::size_t i = 0; i < g.numel(); ++i) (*gi)[i] += g[i];
      }
    }
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("sub", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= bv[i];
  const int ia = a.id, ib = b.id;
  return t.push(std::move(y), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.accum(ia)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = t.accum(ib)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("mul", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= bv[i];
  const int ia = a.id, ib = b.id;
  return t.push(std::move(y), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (Tensor* ga = t.accum(ia)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = t.accum(ib)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var div(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("div", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] /= bv[i];
  const int ia = a.id, ib = b.id;
  return t.push(std::move(y), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& bv = t.value(ib);
    const Tensor& y = t.value(self);
    if (Tensor* ga = t.accum(ia)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] / bv[i];
    }
    if (Tensor* gb = t.accum(ib)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*gb)[i] -= g[i] * y[i] / bv[i];
    }
  });
}

Var scale(Var a, double c) {
  return unary(a, [c](double x) { return c * x; },
               [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary(a, [c](double x) { return x + c; },
               [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var silu(Var a) {
  return unary(
      a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Var mul_const(Var a, const Tensor& c) {
  if (c.numel() != a.numel()) throw InvalidInput("mul_const: shape mismatch");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= c[i];
  const int ia = a.id;
  return a.tape->push(std::move(y), {ia}, [ia, c](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor* ga = t.accum(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i] * c[i];
  });
}

Var add_broadcast(Var x, Var y) {
  Tape& t = same_tape(x, y);
  const Tensor& xv = x.value();
  const Tensor& yv = y.value();
  const std::size_t d = xv.cols();
  if (yv.cols() != d || yv.rows() == 0 || xv.rows() % yv.rows() != 0) {
    throw InvalidInput("add_broadcast: incompatible shapes " +
                       shape_str(xv.shape()) + " and " + shape_str(yv.shape()));
  }
  const std::size_t n = xv.rows(), p = yv.rows();
  Tensor out = xv;
  for (std::size_t r = 0; r < n; ++r) {
    const double* src = yv.data() + (r % p) * d;
    double* dst = out.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
  }
  const int ix = x.id, iy = y.id;
  return t.push(std::move(out), {ix, iy}, [ix, iy, n, p, d](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (Tensor* gx = t.accum(ix)) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i];
    }
    if (Tensor* gy = t.accum(iy)) {
      for (std::size_t r = 0; r < n; ++r) {
        const double* src = g.data() + r * d;
        double* dst = gy->data() + (r % p) * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    }
  });
}

// ---- reductions ------------------------------------------------------------

Var sum_all(Var a) {
  double s = 0.0;
  for (double v : a.value().vec()) s += v;
  const int ia = a.id;
  return a.tape->push(Tensor::scalar(s), {ia}, [ia](Tape& t, int self) {
    const double g = t.grad(self)[0];
    Tensor* ga = t.accum(ia);
    for (auto& v : ga->vec()) v += g;
  });
}

Var mean_all(Var a) {
  const double n = static_cast<double>(a.numel());
  if (n == 0) throw InvalidInput("mean_all: empty tensor");
  return scale(sum_all(a), 1.0 / n);
}

Var sum_last(Var a) {
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), cols = x.cols();
  Shape s(x.shape().begin(), x.shape().end() - 1);
  if (s.empty()) s = {1};
  Tensor y(s);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += x[r * cols + c];
    y[r] = acc;
  }
  const int ia = a.id;
  return a.tape->push(std::move(y), {ia}, [ia, rows, cols](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor* ga = t.accum(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) (*ga)[r * cols + c] += g[r];
    }
  });
}

Var sum_rows(Var a) {
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor y({cols});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) y[c] += x[r * cols + c];
  }
  const int ia = a.id;
  return a.tape->push(std::move(y), {ia}, [ia, rows, cols](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor* ga = t.accum(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) (*ga)[r * cols + c] += g[c];
    }
  });
}

Var mean_groups(Var a, std::size_t group) {
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), d = x.cols();
  if (group == 0 || rows % group != 0) {
    throw InvalidInput("mean_groups: rows not divisible by group size");
  }
  const std::size_t ng = rows / group;
  const double inv = 1.0 / static_cast<double>(group);
  Tensor y({ng, d});
  for (std::size_t gi = 0; gi < ng; ++gi) {
    for (std::size_t r = 0; r < group; ++r) {
      const double* src = x.data() + (gi * group + r) * d;
      for (std::size_t j = 0; j < d; ++j) y[gi * d + j] += src[j];
    }
    for (std::size_t j = 0; j < d; ++j) y[gi * d + j] *= inv;
  }
  const int ia = a.id;
  return a.tape->push(std::move(y), {ia}, [ia, ng, group, d, inv](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor* ga = t.accum(ia);
    for (std::size_t gi = 0; gi < ng; ++gi) {
      for (std::size_t r = 0; r < group; ++r) {
        double* dst = ga->data() + (gi * group + r) * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += g[gi * d + j] * inv;
      }
    }
  });
}

// ---- structure -------------------------------------------------------------

Var reshape(Var a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  const int ia = a.id;
  return a.tape->push(std::move(y), {ia}, [ia](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor* ga = t.accum(ia);
    for (std::size_t i = 0; i < g.numel(); ++i) (*ga)[i] += g[i];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), cols = x.cols();
  if (begin >= end || end > cols) throw InvalidInput("slice_cols: bad range");
  const std::size_t w = end - begin;
  Shape s = x.shape();
  s.back() = w;
  Tensor y(s);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.data() + r * cols + begin, w, y.data() + r * w);
  }
  const int ia = a.id;
  return a.tape->push(std::move(y), {ia}, [ia, rows, cols, begin, w](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor* ga = t.accum(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < w; ++j) (*ga)[r * cols + begin + j] += g[r * w + j];
    }
  });
}

Var slice_groups(Var a, std::size_t group, std::size_t begin, std::size_t len) {
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), d = x.cols();
  if (group == 0 || rows % group != 0 || begin + len > group || len == 0) {
    throw InvalidInput("slice_groups: bad range");
  }
  const std::size_t ng = rows / group;
  Tensor y({ng * len, d});
  for (std::size_t gi = 0; gi < ng; ++gi) {
    std::copy_n(x.data() + (gi * group + begin) * d, len * d,
                y.data() + gi * len * d);
  }
  const int ia = a.id;
  return a.tape->push(std::move(y), {ia}, [ia, ng, group, begin, len, d](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor* ga = t.accum(ia);
    for (std::size_t gi = 0; gi < ng; ++gi) {
      const double* src = g.data() + gi * len * d;
      double* dst = ga->data() + (gi * group + begin) * d;
      for (std::size_t j = 0; j < len * d; ++j) dst[j] += src[j];
    }
  });
}

Var concat_groups(const std::vector<Var>& parts,
                  const std::vector<std::size_t>& rows_per_group) {
  if (parts.empty() || parts.size() != rows_per_group.size()) {
    throw InvalidInput("concat_groups: bad arguments");
  }
  Tape& t = *parts[0].tape;
  const std::size_t d = parts[0].value().cols();
  std::size_t total = 0;
  for (std::size_t rpg : rows_per_group) total += rpg;
  if (rows_per_group[0] == 0) throw InvalidInput("concat_groups: empty part");
  const std::size_t ng = parts[0].value().rows() / rows_per_group[0];
  std::vector<int> ids;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& v = parts[i].value();
    if (parts[i].tape != &t || v.cols() != d || v.rows() != ng * rows_per_group[i]) {
      throw InvalidInput("concat_groups: part " + std::to_string(i) +
                         " has incompatible shape " + shape_str(v.shape()));
    }
    ids.push_back(parts[i].id);
  }
  Tensor y({ng * total, d});
  for (std::size_t gi = 0; gi < ng; ++gi) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const std::size_t rpg = rows_per_group[i];
      std::copy_n(parts[i].value().data() + gi * rpg * d, rpg * d,
                  y.data() + (gi * total + off) * d);
      off += rpg;
    }
  }
  return t.push(std::move(y), ids, [ids, rows_per_group, ng, total, d](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    std::size_t off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::size_t rpg = rows_per_group[i];
      if (Tensor* gi_t = t.accum(ids[i])) {
        for (std::size_t gi = 0; gi < ng; ++gi) {
          const double* src = g.data() + (gi * total + off) * d;
          double* dst = gi_t->data() + gi * rpg * d;
          for (std::size_t j = 0; j < rpg * d; ++j) dst[j] += src[j];
        }
      }
      off += rpg;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  std::vector<std::size_t> rpg;
  for (const Var& p : parts) rpg.push_back(p.value().rows());
  // One group containing every part.
  std::vector<Var> flat;
  for (const Var& p : parts) {
    flat.push_back(p.value().rank() == 2 ? p
                                         : reshape(p, {p.value().rows(), p.value().cols()}));
  }
  return concat_groups(flat, rpg);
}

Var concat_cols(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t n = av.rows(), ca = av.cols(), cb = bv.cols();
  if (bv.rows() != n) throw InvalidInput("concat_cols: row count mismatch");
  Tensor y({n, ca + cb});
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(av.data() + r * ca, ca, y.data() + r * (ca + cb));
    std::copy_n(bv.data() + r * cb, cb, y.data() + r * (ca + cb) + ca);
  }
  const int ia = a.id, ib = b.id;
  return t.push(std::move(y), {ia, ib}, [ia, ib, n, ca, cb](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    if (Tensor* ga = t.accum(ia)) {
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < ca; ++j) (*ga)[r * ca + j] += g[r * (ca + cb) + j];
      }
    }
    if (Tensor* gb = t.accum(ib)) {
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < cb; ++j) (*gb)[r * cb + j] += g[r * (ca + cb) + ca + j];
      }
    }
  });
}

Var gather_rows(Var a, const std::vector<std::size_t>& rows) {
  const Tensor& x = a.value();
  const std::size_t d = x.cols(), n = x.rows();
  Tensor y({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) throw InvalidInput("gather_rows: index out of range");
    std::copy_n(x.data() + rows[i] * d, d, y.data() + i * d);
  }
  const int ia = a.id;
  return a.tape->push(std::move(y), {ia}, [ia, rows, d](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor* ga = t.accum(ia);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double* dst = ga->data() + rows[i] * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
    }
  });
}

// ---- network primitives ----------------------------------------------------

Var linear(Var x, Var w, Var b) {
  Tape& t = same_tape(x, w);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (wv.rank() != 2 || xv.cols() != wv.dim(0)) {
    throw InvalidInput("linear: input " + shape_str(xv.shape()) +
                       " incompatible with weight " + shape_str(wv.shape()));
  }
  const std::size_t n = xv.rows(), in = wv.dim(0), out = wv.dim(1);
  Shape s = xv.shape();
  s.back() = out;
  Tensor y(s);
  MapMat(y.data(), n, out).noalias() = CMapMat(xv.data(), n, in) * CMapMat(wv.data(), in, out);
  std::vector<int> ids{x.id, w.id};
  if (b.valid()) {
    if (b.tape != &t || b.numel() != out) throw InvalidInput("linear: bad bias");
    const Tensor& bv = b.value();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < out; ++j) y[r * out + j] += bv[j];
    }
    ids.push_back(b.id);
  }
  return t.push(std::move(y), ids, [ids, n, in, out](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    CMapMat gm(g.data(), n, out);
    if (Tensor* gx = t.accum(ids[0])) {
      MapMat(gx->data(), n, in).noalias() += gm * CMapMat(t.value(ids[1]).data(), in, out).transpose();
    }
    if (Tensor* gw = t.accum(ids[1])) {
      MapMat(gw->data(), in, out).noalias() += CMapMat(t.value(ids[0]).data(), n, in).transpose() * gm;
    }
    if (ids.size() > 2) {
      if (Tensor* gb = t.accum(ids[2])) {
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t j = 0; j < out; ++j) (*gb)[j] += g[r * out + j];
        }
      }
    }
  });
}

Var softmax(Var x) {
  const Tensor& xv = x.value();
  Tensor y = softmax(xv, xv.rank() - 1);
  const std::size_t rows = xv.rows(), cols = xv.cols();
  const int ix = x.id;
  return x.tape->push(std::move(y), {ix}, [ix, rows, cols](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor* gx = t.accum(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cols; ++c) s += g[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        (*gx)[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - s);
      }
    }
  });
}

Var log_softmax(Var x) {
  const Tensor& xv = x.value();
  Tensor y = log_softmax(xv, xv.rank() - 1);
  const std::size_t rows = xv.rows(), cols = xv.cols();
  const int ix = x.id;
  return x.tape->push(std::move(y), {ix}, [ix, rows, cols](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor* gx = t.accum(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cols; ++c) s += g[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        (*gx)[r * cols + c] += g[r * cols + c] - std::exp(y[r * cols + c]) * s;
      }
    }
  });
}

Var log_sum_exp(Var x) {
  const Tensor& xv = x.value();
  Tensor y = log_sum_exp(xv, xv.rank() - 1);
  const std::size_t rows = xv.rows(), cols = xv.cols();
  const int ix = x.id;
  return x.tape->push(std::move(y), {ix}, [ix, rows, cols](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    const Tensor& xv = t.value(ix);
    Tensor* gx = t.accum(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      if (std::isinf(y[r])) continue;
      for (std::size_t c = 0; c < cols; ++c) {
        (*gx)[r * cols + c] += g[r] * std::exp(xv[r * cols + c] - y[r]);
      }
    }
  });
}

Var rms_norm(Var x, Var gain, double eps) {
  Tape& t = same_tape(x, gain);
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), d = xv.cols();
  if (d == 0) throw InvalidInput("rms_norm: empty last axis");
  if (gain.numel() != d) throw InvalidInput("rms_norm: gain size mismatch");
  const Tensor& gv = gain.value();
  Tensor y(xv.shape());
  std::vector<double> inv_rms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double ms = 0.0;
    for (std::size_t j = 0; j < d; ++j) ms += xr[j] * xr[j];
    ms /= static_cast<double>(d);
    const double denom = std::sqrt(ms + eps);
    inv_rms[r] = denom > 0.0 ? 1.0 / denom : 0.0;
    for (std::size_t j = 0; j < d; ++j) y[r * d + j] = gv[j] * xr[j] * inv_rms[r];
  }
  const int ix = x.id, ig = gain.id;
  return t.push(std::move(y), {ix, ig}, [ix, ig, rows, d, inv_rms](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(ix);
    const Tensor& gv = t.value(ig);
    Tensor* gx = t.accum(ix);
    Tensor* gg = t.accum(ig);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = xv.data() + r * d;
      const double* gr = g.data() + r * d;
      const double ir = inv_rms[r];
      if (gg) {
        for (std::size_t j = 0; j < d; ++j) (*gg)[j] += gr[j] * xr[j] * ir;
      }
      if (gx) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += gv[j] * gr[j] * xr[j];
        const double k = ir * ir * ir * s / static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
          (*gx)[r * d + j] += ir * gv[j] * gr[j] - k * xr[j];
        }
      }
    }
  });
}

Var rope(Var x, const std::vector<double>& positions, std::size_t n_heads,
         double base) {
  const Tensor& xv = x.value();
  const std::size_t width = xv.cols(), rows = xv.rows();
  const std::size_t seq = positions.size();
  if (n_heads == 0 || width % n_heads != 0) {
    throw InvalidInput("rope: width not divisible by head count");
  }
  const std::size_t hd = width / n_heads;
  if (hd % 2 != 0) throw InvalidInput("rope: odd head dimension");
  if (seq == 0 || rows % seq != 0) {
    throw InvalidInput("rope: rows not divisible by sequence length");
  }
  const std::size_t half = hd / 2;
  std::vector<double> cs(seq * half), sn(seq * half);
  for (std::size_t p = 0; p < seq; ++p) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
      const double ang = positions[p] * freq;
      cs[p * half + i] = std::cos(ang);
      sn[p * half + i] = std::sin(ang);
    }
  }
  auto rotate = [=](const double* src, double* dst, double sign) {
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t p = r % seq;
      for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t off = r * width + h * hd;
        for (std::size_t i = 0; i < half; ++i) {
          const double c = cs[p * half + i], s = sign * sn[p * half + i];
          const double a = src[off + 2 * i], b = src[off + 2 * i + 1];
          dst[off + 2 * i] += a * c - b * s;
          dst[off + 2 * i + 1] += a * s + b * c;
        }
      }
    }
  };
  Tensor y(xv.shape());
  rotate(xv.data(), y.data(), 1.0);
  const int ix = x.id;
  return x.tape->push(std::move(y), {ix}, [ix, rotate](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    Tensor* gx = t.accum(ix);
    rotate(g.data(), gx->data(), -1.0);
  });
}

Var gqa_attention(Var q, Var k, Var v, const AttentionShape& sh,
                  const std::vector<bool>& mask) {
  Tape& t = same_tape(q, k);
  same_tape(q, v);
  if (sh.n_kv_groups == 0 || sh.n_heads % sh.n_kv_groups != 0) {
    throw ConfigError("gqa_attention: n_heads " + std::to_string(sh.n_heads) +
                      " not divisible by n_kv_groups " +
                      std::to_string(sh.n_kv_groups));
  }
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  const std::size_t B = sh.batch, Tq = sh.q_len, Tk = sh.kv_len;
  const std::size_t H = sh.n_heads, G = sh.n_kv_groups;
  if (qv.cols() % H != 0) throw InvalidInput("gqa_attention: query width");
  const std::size_t hd = qv.cols() / H;
  if (qv.rows() != B * Tq || kv.rows() != B * Tk || vv.rows() != B * Tk ||
      kv.cols() != G * hd || vv.cols() != G * hd) {
    throw InvalidInput("gqa_attention: inconsistent head dimensions");
  }
  if (!mask.empty() && mask.size() != Tq * Tk) {
    throw InvalidInput("gqa_attention: mask size");
  }
  const std::size_t per_group = H / G;
  const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t qw = H * hd, kw = G * hd;
  std::vector<double> probs(B * H * Tq * Tk);
  Tensor out({B * Tq, qw});
  std::vector<double> row(Tk);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t gk = h / per_group;
      for (std::size_t i = 0; i < Tq; ++i) {
        const double* qi = qv.data() + (b * Tq + i) * qw + h * hd;
        double m = kNegInf;
        for (std::size_t j = 0; j < Tk; ++j) {
          if (!mask.empty() && !mask[i * Tk + j]) {
            row[j] = kNegInf;
            continue;
          }
          const double* kj = kv.data() + (b * Tk + j) * kw + gk * hd;
          double s = 0.0;
          for (std::size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
          row[j] = s * sc;
          m = std::max(m, row[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < Tk; ++j) {
          row[j] = row[j] == kNegInf ? 0.0 : std::exp(row[j] - m);
          z += row[j];
        }
        double* p = probs.data() + ((b * H + h) * Tq + i) * Tk;
        double* oi = out.data() + (b * Tq + i) * qw + h * hd;
        for (std::size_t j = 0; j < Tk; ++j) {
          p[j] = row[j] / z;
          const double* vj = vv.data() + (b * Tk + j) * kw + gk * hd;
          for (std::size_t c = 0; c < hd; ++c) oi[c] += p[j] * vj[c];
        }
      }
    }
  }
  const int iq = q.id, ik = k.id, iv = v.id;
  return t.push(std::move(out), {iq, ik, iv},
                [=, probs = std::move(probs)](Tape& t, int self) {
    const Tensor& g = t.grad(self);
    const Tensor& qv = t.value(iq);
    const Tensor& kv = t.value(ik);
    const Tensor& vv = t.value(iv);
    Tensor* gq = t.accum(iq);
    Tensor* gk_t = t.accum(ik);
    Tensor* gv = t.accum(iv);
    std::vector<double> dp(Tk);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t gk = h / per_group;
        for (std::size_t i = 0; i < Tq; ++i) {
          const double* p = probs.data() + ((b * H + h) * Tq + i) * Tk;
          const double* gi = g.data() + (b * Tq + i) * qw + h * hd;
          double s = 0.0;
          for (std::size_t j = 0; j < Tk; ++j) {
            const double* vj = vv.data() + (b * Tk + j) * kw + gk * hd;
            double acc = 0.0;
            for (std::size_t c = 0; c < hd; ++c) acc += gi[c] * vj[c];
            dp[j] = acc;
            s += p[j] * acc;
            if (gv) {
              double* gvj = gv->data() + (b * Tk + j) * kw + gk * hd;
              for (std::size_t c = 0; c < hd; ++c) gvj[c] += p[j] * gi[c];
            }
          }
          const double* qi = qv.data() + (b * Tq + i) * qw + h * hd;
          for (std::size_t j = 0; j < Tk; ++j) {
            const double ds = p[j] * (dp[j] - s) * sc;
            if (ds == 0.0) continue;
            const double* kj = kv.data() + (b * Tk + j) * kw + gk * hd;
            if (gq) {
              double* gqi = gq->data() + (b * Tq + i) * qw + h * hd;
              for (std::size_t c = 0; c < hd; ++c) gqi[c] += ds * kj[c];
            }
            if (gk_t) {
              double* gkj = gk_t->data() + (b * Tk + j) * kw + gk * hd;
              for (std::size_t c = 0; c < hd; ++c) gkj[c] += ds * qi[c];
            }
          }
        }
      }
    }
  });
}

Var cv_squared(Var v) {
  const Tensor& x = v.value();
  const std::size_t n = x.numel();
  if (n == 0) throw InvalidInput("cv_squared: empty vector");
  const double dn = static_cast<double>(n);
  double mean = 0.0;
  for (double e : x.vec()) mean += e;
  mean /= dn;
  double var = 0.0;
  for (double e : x.vec()) var += (e - mean) * (e - mean);
  var /= dn;
  const double value = mean == 0.0 ? 0.0 : var / (mean * mean);
  const int iv = v.id;
  return v.tape->push(Tensor::scalar(value), {iv}, [iv, n, dn, mean, var](Tape& t, int self) {
    if (mean == 0.0) return;
    const double g = t.grad(self)[0];
    const Tensor& x = t.value(iv);
    Tensor* gx = t.accum(iv);
    const double m2 = mean * mean;
    for (std::size_t i = 0; i < n; ++i) {
      (*gx)[i] += g * (2.0 * (x[i] - mean) / dn / m2 - 2.0 * var / (m2 * mean) / dn);
    }
  });
}

}  // namespace lmoe::ops
