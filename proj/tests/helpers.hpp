#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include "afno/mixers.hpp"
#include "afno/rng.hpp"
#include "afno/spectral.hpp"
#include "afno/tensor.hpp"

namespace testutil {

using afno::cdouble;
using afno::Shape;
using afno::Tensor;

inline Tensor random_real(const Shape& shape, afno::Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.raw_mut()) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor random_complex(const Shape& shape, afno::Rng& rng) {
  Tensor t(shape, afno::DType::complex128);
  for (double& v : t.raw_mut()) v = rng.uniform(-1.0, 1.0);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  const auto x = a.raw();
  const auto y = b.raw();
  if (x.size() != y.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  const auto x = a.raw();
  const auto y = b.raw();
  return a.shape() == b.shape() && std::equal(x.begin(), x.end(), y.begin(), y.end());
}

// full 2D DFT of one channel of a row-major [h, w, d] complex buffer, by definition
inline std::vector<cdouble> dft2_loop(const std::vector<cdouble>& x, std::size_t h, std::size_t w, std::size_t d,
                                      bool inverse) {
  const double sign = inverse ? 1.0 : -1.0;
  const double pi2 = 2.0 * std::acos(-1.0);
  std::vector<cdouble> out(h * w * d);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v)
      for (std::size_t c = 0; c < d; ++c) {
        cdouble acc = 0.0;
        for (std::size_t m = 0; m < h; ++m)
          for (std::size_t n = 0; n < w; ++n) {
            const double ang = sign * pi2 * (static_cast<double>(u * m) / h + static_cast<double>(v * n) / w);
            acc += x[(m * w + n) * d + c] * cdouble(std::cos(ang), std::sin(ang));
          }
        out[(u * w + v) * d + c] = inverse ? acc / static_cast<double>(h * w) : acc;
      }
  return out;
}

inline std::vector<cdouble> to_complex(const Tensor& t) {
  if (t.is_complex()) return {t.complex_values().begin(), t.complex_values().end()};
  return {t.raw().begin(), t.raw().end()};
}

// half-spectrum slice [h, w/2+1, d] of a full [h, w, d] spectrum
inline std::vector<cdouble> half_of(const std::vector<cdouble>& full, std::size_t h, std::size_t w, std::size_t d) {
  const std::size_t hw = afno::spectral::half_width(w);
  std::vector<cdouble> out(h * hw * d);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < hw; ++j)
      for (std::size_t c = 0; c < d; ++c) out[(i * hw + j) * d + c] = full[(i * w + j) * d + c];
  return out;
}

inline double max_diff(std::span<const cdouble> a, const std::vector<cdouble>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Definition-level attention: out[s] = sum_t K[s,t] x[t] Wv, K = softmax_t(<x_s Wq, x_t Wk> / sqrt(d))
inline std::vector<double> attention_oracle(const Tensor& x, const afno::AttentionParams& p) {
  const std::size_t d = x.dim(-1), n = x.numel() / d;
  const auto proj = [&](const Tensor& w, std::size_t t, std::size_t j) {
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += x.real_at(t * d + c) * w.real_at(c * d + j);
    return acc;
  };
  std::vector<double> out(n * d, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<double> logits(n);
    double mx = -INFINITY;
    for (std::size_t t = 0; t < n; ++t) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += proj(p.wq, s, j) * proj(p.wk, t, j);
      logits[t] = acc / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, logits[t]);
    }
    double z = 0.0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < d; ++j) out[s * d + j] += logits[t] / z * proj(p.wv, t, j);
  }
  return out;
}

}  // namespace testutil
