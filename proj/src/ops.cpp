#include "afno/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace afno {

namespace {

using autograd::GradSpans;

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw DimensionError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                         dtype_name(b.dtype()));
  }
}

void require_real(const Tensor& x, const char* op) {
  if (x.is_complex()) throw DimensionError(std::string(op) + " is defined for real tensors only");
}

Shape batch_of(const Shape& s) { return Shape(s.begin(), s.end() - 2); }

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcastable");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

std::vector<std::size_t> broadcast_index(const Shape& out, const Shape& in) {
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> map(n);
  if (in == out) {
    std::iota(map.begin(), map.end(), std::size_t{0});
    return map;
  }
  const std::size_t r = out.size();
  const std::size_t offset = r - in.size();
  std::vector<std::size_t> stride(r, 0);
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    stride[i + offset] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    map[flat] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      if (++idx[ax] < out[ax]) {
        src += stride[ax];
        break;
      }
      src -= stride[ax] * (out[ax] - 1);
      idx[ax] = 0;
    }
  }
  return map;
}

namespace {

// Source index for each flat output index of a broadcast. Same-shape and
// trailing-suffix operands skip the explicit table.
struct IndexMap {
  std::size_t total = 0;
  std::size_t period = 0;  // 0: use table
  std::vector<std::size_t> table;

  bool identity() const { return period == total; }
  std::size_t operator()(std::size_t i) const { return period != 0 ? i % period : table[i]; }
};

// Sequential walk over output indices without a division per element.
struct IndexCursor {
  const IndexMap& map;
  std::size_t pos = 0;
  explicit IndexCursor(const IndexMap& m) : map(m) {}
  std::size_t next(std::size_t i) {
    if (map.period == 0) return map.table[i];
    const std::size_t r = pos;
    if (++pos == map.period) pos = 0;
    return r;
  }
};

template <class F>
void for_each_pair(const IndexMap& ia, const IndexMap& ib, std::size_t n, F&& f) {
  IndexCursor ca(ia), cb(ib);
  for (std::size_t i = 0; i < n; ++i) f(i, ca.next(i), cb.next(i));
}

IndexMap make_index_map(const Shape& out, const Shape& in) {
  IndexMap m;
  m.total = shape_numel(out);
  // strip leading ones, then check whether `in` is a suffix of `out`
  std::size_t lead = 0;
  while (lead < in.size() && in[lead] == 1) ++lead;
  const Shape core(in.begin() + static_cast<std::ptrdiff_t>(lead), in.end());
  if (core.size() <= out.size() &&
      std::equal(core.begin(), core.end(), out.end() - static_cast<std::ptrdiff_t>(core.size()))) {
    m.period = std::max<std::size_t>(shape_numel(core), 1);
    return m;
  }
  m.table = broadcast_index(out, in);
  return m;
}

}  // namespace

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  const bool cplx = a.is_complex();
  const std::size_t w = cplx ? 2 : 1;
  if (op == ElementwiseOp::relu) {
    std::vector<double> out(a.raw().begin(), a.raw().end());
    for (double& v : out) v = v > 0.0 ? v : 0.0;
    if (auto* t = autograd::PieceTracker::active()) {
      for (double v : a.raw()) t->note(v > 0.0);
    }
    return autograd::record("relu", a.shape(), a.dtype(), std::move(out), {a},
                            [a](std::span<const double> g, const GradSpans& gin) {
                              const auto x = a.raw();
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                if (x[i] > 0.0) gin[0][i] += g[i];
                              }
                            });
  }
  if (!b.defined()) throw std::invalid_argument("binary elementwise op needs a second operand");
  require_same_dtype(a, b, "elementwise");
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const std::size_t n = shape_numel(out_shape);
  IndexMap ia = make_index_map(out_shape, a.shape());
  IndexMap ib = make_index_map(out_shape, b.shape());
  const auto ra = a.raw();
  const auto rb = b.raw();
  std::vector<double> out(n * w);

  const char* name = op == ElementwiseOp::add ? "add" : op == ElementwiseOp::sub ? "sub" : "mul";
  if (op != ElementwiseOp::mul) {
    const double sign = op == ElementwiseOp::add ? 1.0 : -1.0;
    if (ia.identity() && ib.identity()) {
      for (std::size_t i = 0; i < n * w; ++i) out[i] = ra[i] + sign * rb[i];
    } else {
      for_each_pair(ia, ib, n, [&](std::size_t i, std::size_t xa, std::size_t xb) {
        for (std::size_t c = 0; c < w; ++c) out[i * w + c] = ra[xa * w + c] + sign * rb[xb * w + c];
      });
    }
    return autograd::record(name, out_shape, a.dtype(), std::move(out), {a, b},
                            [ia = std::move(ia), ib = std::move(ib), w, sign, n](std::span<const double> g,
                                                                                 const GradSpans& gin) {
                              const bool ga = !gin[0].empty(), gb = !gin[1].empty();
                              for_each_pair(ia, ib, n, [&](std::size_t i, std::size_t xa, std::size_t xb) {
                                for (std::size_t c = 0; c < w; ++c) {
                                  if (ga) gin[0][xa * w + c] += g[i * w + c];
                                  if (gb) gin[1][xb * w + c] += sign * g[i * w + c];
                                }
                              });
                            });
  }

  if (!cplx) {
    for_each_pair(ia, ib, n, [&](std::size_t i, std::size_t xa, std::size_t xb) { out[i] = ra[xa] * rb[xb]; });
  } else {
    for_each_pair(ia, ib, n, [&](std::size_t i, std::size_t xa, std::size_t xb) {
      const double ar = ra[2 * xa], ai = ra[2 * xa + 1];
      const double br = rb[2 * xb], bi = rb[2 * xb + 1];
      out[2 * i] = ar * br - ai * bi;
      out[2 * i + 1] = ar * bi + ai * br;
    });
  }
  return autograd::record(
      name, out_shape, a.dtype(), std::move(out), {a, b},
      [a, b, ia = std::move(ia), ib = std::move(ib), cplx, n](std::span<const double> g, const GradSpans& gin) {
        const auto ra = a.raw();
        const auto rb = b.raw();
        const bool ga = !gin[0].empty(), gb = !gin[1].empty();
        if (!cplx) {
          for_each_pair(ia, ib, n, [&](std::size_t i, std::size_t xa, std::size_t xb) {
            if (ga) gin[0][xa] += g[i] * rb[xb];
            if (gb) gin[1][xb] += g[i] * ra[xa];
          });
          return;
        }
        // d(a*b): grad_a = g * conj(b), grad_b = g * conj(a)
        for_each_pair(ia, ib, n, [&](std::size_t i, std::size_t xa, std::size_t xb) {
          const double gr = g[2 * i], gi = g[2 * i + 1];
          if (ga) {
            const double br = rb[2 * xb], bi = rb[2 * xb + 1];
            gin[0][2 * xa] += gr * br + gi * bi;
            gin[0][2 * xa + 1] += gi * br - gr * bi;
          }
          if (gb) {
            const double ar = ra[2 * xa], ai = ra[2 * xa + 1];
            gin[1][2 * xb] += gr * ar + gi * ai;
            gin[1][2 * xb + 1] += gi * ar - gr * ai;
          }
        });
      });
}

namespace {

// C[m,q] += A[m,p] B[p,q]
void gemm_real(const double* __restrict A, const double* __restrict B, double* __restrict C, std::size_t m,
               std::size_t p, std::size_t q) {
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C + i * q;
    for (std::size_t k = 0; k < p; ++k) {
      const double aik = A[i * p + k];
      const double* brow = B + k * q;
      for (std::size_t j = 0; j < q; ++j) c[j] += aik * brow[j];
    }
  }
}

void gemm_complex(const double* __restrict A, const double* __restrict B, double* __restrict C, std::size_t m,
                  std::size_t p, std::size_t q) {
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C + 2 * i * q;
    for (std::size_t k = 0; k < p; ++k) {
      const double ar = A[2 * (i * p + k)], ai = A[2 * (i * p + k) + 1];
      const double* brow = B + 2 * k * q;
      for (std::size_t j = 0; j < q; ++j) {
        const double br = brow[2 * j], bi = brow[2 * j + 1];
        c[2 * j] += ar * br - ai * bi;
        c[2 * j + 1] += ar * bi + ai * br;
      }
    }
  }
}

// dA[m,p] += dC[m,q] B^H, via an explicit B^H so the inner loop is an axpy
void grad_lhs(const double* dC, const double* B, double* dA, std::size_t m, std::size_t p, std::size_t q,
              bool cplx, std::vector<double>& scratch) {
  const std::size_t w = cplx ? 2 : 1;
  scratch.resize(q * p * w);
  for (std::size_t k = 0; k < p; ++k) {
    for (std::size_t j = 0; j < q; ++j) {
      if (cplx) {
        scratch[2 * (j * p + k)] = B[2 * (k * q + j)];
        scratch[2 * (j * p + k) + 1] = -B[2 * (k * q + j) + 1];
      } else {
        scratch[j * p + k] = B[k * q + j];
      }
    }
  }
  if (cplx) {
    gemm_complex(dC, scratch.data(), dA, m, q, p);
  } else {
    gemm_real(dC, scratch.data(), dA, m, q, p);
  }
}

// dB[p,q] += A^H dC
void grad_rhs(const double* A, const double* dC, double* dB, std::size_t m, std::size_t p, std::size_t q,
              bool cplx) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < p; ++k) {
      if (!cplx) {
        const double a = A[i * p + k];
        for (std::size_t j = 0; j < q; ++j) dB[k * q + j] += a * dC[i * q + j];
      } else {
        const double ar = A[2 * (i * p + k)], ai = -A[2 * (i * p + k) + 1];
        for (std::size_t j = 0; j < q; ++j) {
          const double gr = dC[2 * (i * q + j)], gi = dC[2 * (i * q + j) + 1];
          dB[2 * (k * q + j)] += ar * gr - ai * gi;
          dB[2 * (k * q + j) + 1] += ar * gi + ai * gr;
        }
      }
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  require_same_dtype(a, b, "matmul");
  const std::size_t m = a.dim(-2), p = a.dim(-1), q = b.dim(-1);
  if (b.dim(-2) != p) {
    throw DimensionError("matmul inner dimensions differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const Shape ba = batch_of(a.shape()), bb = batch_of(b.shape());
  Shape out_batch = broadcast_shape(ba, bb);
  const Shape out_batch_nonempty = out_batch.empty() ? Shape{1} : out_batch;
  const auto map_a = broadcast_index(out_batch_nonempty, ba.empty() ? Shape{1} : ba);
  const auto map_b = broadcast_index(out_batch_nonempty, bb.empty() ? Shape{1} : bb);
  const bool cplx = a.is_complex();
  const std::size_t w = cplx ? 2 : 1;
  const std::size_t nb = map_a.size();

  std::vector<double> out(nb * m * q * w, 0.0);
  const double* ra = a.raw().data();
  const double* rb = b.raw().data();
  for (std::size_t t = 0; t < nb; ++t) {
    const double* A = ra + map_a[t] * m * p * w;
    const double* B = rb + map_b[t] * p * q * w;
    double* C = out.data() + t * m * q * w;
    if (cplx) {
      gemm_complex(A, B, C, m, p, q);
    } else {
      gemm_real(A, B, C, m, p, q);
    }
  }
  Shape out_shape = out_batch;
  out_shape.push_back(m);
  out_shape.push_back(q);
  return autograd::record("matmul", std::move(out_shape), a.dtype(), std::move(out), {a, b},
                          [a, b, map_a, map_b, m, p, q, w, cplx](std::span<const double> g, const GradSpans& gin) {
                            const double* ra = a.raw().data();
                            const double* rb = b.raw().data();
                            std::vector<double> scratch;
                            for (std::size_t t = 0; t < map_a.size(); ++t) {
                              const double* dC = g.data() + t * m * q * w;
                              if (!gin[0].empty()) {
                                grad_lhs(dC, rb + map_b[t] * p * q * w, gin[0].data() + map_a[t] * m * p * w, m,
                                         p, q, cplx, scratch);
                              }
                              if (!gin[1].empty()) {
                                grad_rhs(ra + map_a[t] * m * p * w, dC, gin[1].data() + map_b[t] * p * q * w, m,
                                         p, q, cplx);
                              }
                            }
                          });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.raw().begin(), x.raw().end());
  for (double& v : out) v *= factor;
  return autograd::record("scale", x.shape(), x.dtype(), std::move(out), {x},
                          [factor](std::span<const double> g, const GradSpans& gin) {
                            for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += factor * g[i];
                          });
}

Tensor sum(const Tensor& x) {
  require_real(x, "sum");
  const auto r = x.raw();
  const double total = std::accumulate(r.begin(), r.end(), 0.0);
  return autograd::record("sum", Shape{1}, DType::real64, {total}, {x},
                          [](std::span<const double> g, const GradSpans& gin) {
                            for (double& v : gin[0]) v += g[0];
                          });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean_axis(const Tensor& x, int axis) {
  const int r = static_cast<int>(x.rank());
  const int ax = axis < 0 ? axis + r : axis;
  if (ax < 0 || ax >= r) throw DimensionError("mean_axis: bad axis for shape " + shape_str(x.shape()));
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (int i = ax + 1; i < r; ++i) inner *= s[static_cast<std::size_t>(i)];
  const std::size_t n = s[static_cast<std::size_t>(ax)];
  const std::size_t w = x.is_complex() ? 2 : 1;
  const double inv = 1.0 / static_cast<double>(n);
  std::vector<double> out(outer * inner * w, 0.0);
  const auto raw = x.raw();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t i = 0; i < inner * w; ++i) out[o * inner * w + i] += raw[(o * n + k) * inner * w + i];
    }
  }
  for (double& v : out) v *= inv;
  Shape out_shape;
  for (int i = 0; i < r; ++i) {
    if (i != ax) out_shape.push_back(s[static_cast<std::size_t>(i)]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  return autograd::record("mean_axis", std::move(out_shape), x.dtype(), std::move(out), {x},
                          [outer, inner, n, w, inv](std::span<const double> g, const GradSpans& gin) {
                            for (std::size_t o = 0; o < outer; ++o) {
                              for (std::size_t k = 0; k < n; ++k) {
                                for (std::size_t i = 0; i < inner * w; ++i) {
                                  gin[0][(o * n + k) * inner * w + i] += inv * g[o * inner * w + i];
                                }
                              }
                            }
                          });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<double> out(x.raw().begin(), x.raw().end());
  return autograd::record("reshape", std::move(shape), x.dtype(), std::move(out), {x},
                          [](std::span<const double> g, const GradSpans& gin) {
                            for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                          });
}

Tensor as_real(const Tensor& z) {
  if (!z.is_complex()) throw DimensionError("as_real needs a complex tensor, got " + shape_str(z.shape()));
  Shape shape = z.shape();
  shape.push_back(2);
  std::vector<double> out(z.raw().begin(), z.raw().end());
  return autograd::record("as_real", std::move(shape), DType::real64, std::move(out), {z},
                          [](std::span<const double> g, const GradSpans& gin) {
                            for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                          });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t r = x.rank();
  if (axes.size() != r) throw DimensionError("permute: axis list length differs from rank " + shape_str(x.shape()));
  std::vector<bool> seen(r, false);
  for (std::size_t a : axes) {
    if (a >= r || seen[a]) throw DimensionError("permute: invalid axis permutation");
    seen[a] = true;
  }
  const auto& s = x.shape();
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[axes[i]];
  std::vector<std::size_t> in_stride(r);
  std::size_t st = 1;
  for (std::size_t i = r; i-- > 0;) {
    in_stride[i] = st;
    st *= s[i];
  }
  const std::size_t n = x.numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    src[flat] = off;
    for (std::size_t ax = r; ax-- > 0;) {
      const std::size_t stride = in_stride[axes[ax]];
      if (++idx[ax] < out_shape[ax]) {
        off += stride;
        break;
      }
      off -= stride * (out_shape[ax] - 1);
      idx[ax] = 0;
    }
  }
  const std::size_t w = x.is_complex() ? 2 : 1;
  const auto raw = x.raw();
  std::vector<double> out(n * w);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < w; ++c) out[i * w + c] = raw[src[i] * w + c];
  }
  return autograd::record("permute", std::move(out_shape), x.dtype(), std::move(out), {x},
                          [src, w](std::span<const double> g, const GradSpans& gin) {
                            for (std::size_t i = 0; i < src.size(); ++i) {
                              for (std::size_t c = 0; c < w; ++c) gin[0][src[i] * w + c] += g[i * w + c];
                            }
                          });
}

Tensor transpose_last2(const Tensor& x) {
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  if (axes.size() < 2) throw DimensionError("transpose_last2 needs rank >= 2");
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(x, axes);
}

Tensor softmax_last(const Tensor& x) {
  require_real(x, "softmax");
  const std::size_t n = x.dim(-1);
  const std::size_t rows = x.numel() / n;
  const auto raw = x.raw();
  std::vector<double> out(raw.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = raw.data() + r * n;
    double* o = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (o[j] = std::exp(in[j] - mx));
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
  }
  auto y = std::make_shared<std::vector<double>>(out);
  return autograd::record("softmax", x.shape(), DType::real64, std::move(out), {x},
                          [y, n, rows](std::span<const double> g, const GradSpans& gin) {
                            for (std::size_t r = 0; r < rows; ++r) {
                              const double* yr = y->data() + r * n;
                              const double* gr = g.data() + r * n;
                              double dot = 0.0;
                              for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
                              for (std::size_t j = 0; j < n; ++j) gin[0][r * n + j] += yr[j] * (gr[j] - dot);
                            }
                          });
}

Tensor layer_norm(const Tensor& x, const Tensor& scale_t, const Tensor& shift_t, double eps) {
  require_real(x, "layer_norm");
  const std::size_t d = x.dim(-1);
  if (scale_t.numel() != d || shift_t.numel() != d) {
    throw DimensionError("layer_norm parameters must have " + std::to_string(d) + " entries, got " +
                         shape_str(scale_t.shape()) + " and " + shape_str(shift_t.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto raw = x.raw();
  const auto gamma = scale_t.raw();
  const auto beta = shift_t.raw();
  auto xhat = std::make_shared<std::vector<double>>(raw.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(raw.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = raw.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (in[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gamma[j] + beta[j];
    }
  }
  return autograd::record(
      "layer_norm", x.shape(), DType::real64, std::move(out), {x, scale_t, shift_t},
      [xhat, inv_std, scale_t, d, rows](std::span<const double> g, const GradSpans& gin) {
        const auto gamma = scale_t.raw();
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* h = xhat->data() + r * d;
          const double* gr = g.data() + r * d;
          if (!gin[0].empty()) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = gr[j] * gamma[j];
              m1 += gh;
              m2 += gh * h[j];
            }
            m1 *= inv_d;
            m2 *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              gin[0][r * d + j] += (*inv_std)[r] * (gr[j] * gamma[j] - m1 - h[j] * m2);
            }
          }
          for (std::size_t j = 0; j < d; ++j) {
            if (!gin[1].empty()) gin[1][j] += gr[j] * h[j];
            if (!gin[2].empty()) gin[2][j] += gr[j];
          }
        }
      });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_real(logits, "cross_entropy");
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy expects logits [B, C] with B labels, got " + shape_str(logits.shape()));
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  const auto raw = logits.raw();
  auto probs = std::make_shared<std::vector<double>>(raw.size());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw std::out_of_range("label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
    }
    const double* row = raw.data() + b * classes;
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t c = 0; c < classes; ++c) (*probs)[b * classes + c] = std::exp(row[c] - log_z);
    loss += log_z - row[label];
  }
  loss /= static_cast<double>(batch);
  std::vector<int> lab(labels.begin(), labels.end());
  return autograd::record("cross_entropy", Shape{1}, DType::real64, {loss}, {logits},
                          [probs, lab, batch, classes](std::span<const double> g, const GradSpans& gin) {
                            const double s = g[0] / static_cast<double>(batch);
                            for (std::size_t b = 0; b < batch; ++b) {
                              for (std::size_t c = 0; c < classes; ++c) {
                                const double onehot = static_cast<int>(c) == lab[b] ? 1.0 : 0.0;
                                gin[0][b * classes + c] += s * ((*probs)[b * classes + c] - onehot);
                              }
                            }
                          });
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  const Tensor diff = sub(pred, target);
  return mean(mul(diff, diff));
}

}  // namespace afno
