#include "afno/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

namespace afno::spectral {

namespace {

using autograd::GradSpans;

inline cdouble cmul(cdouble a, cdouble b) {
  return {a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real()};
}

bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

struct Plan {
  std::size_t n = 0;
  // radix-2
  std::vector<std::size_t> bitrev;
  std::vector<cdouble> twiddle;  // e^{-2 pi i k / n}, k < n/2
  // Bluestein
  std::vector<cdouble> chirp;       // e^{-i pi k^2 / n}
  std::vector<cdouble> kernel_fft;  // FFT of the conjugate chirp, length m
  std::shared_ptr<const Plan> inner;
};

std::shared_ptr<const Plan> get_plan(std::size_t n);

std::shared_ptr<const Plan> build_plan(std::size_t n) {
  auto plan = std::make_shared<Plan>();
  plan->n = n;
  if (is_pow2(n)) {
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    plan->bitrev.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
      plan->bitrev[i] = r;
    }
    plan->twiddle.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      plan->twiddle[k] = {std::cos(angle), std::sin(angle)};
    }
    return plan;
  }
  std::size_t m = 1;
  while (m < 2 * n - 1) m <<= 1;
  plan->inner = get_plan(m);
  plan->chirp.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t k2 = (k * k) % (2 * n);
    const double angle = -std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
    plan->chirp[k] = {std::cos(angle), std::sin(angle)};
  }
  std::vector<cdouble> b(m, cdouble{0.0, 0.0});
  b[0] = std::conj(plan->chirp[0]);
  for (std::size_t k = 1; k < n; ++k) b[k] = b[m - k] = std::conj(plan->chirp[k]);
  fft(b, false);
  plan->kernel_fft = std::move(b);
  return plan;
}

std::shared_ptr<const Plan> get_plan(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, std::shared_ptr<const Plan>> cache;
  {
    std::lock_guard lock(mutex);
    if (auto it = cache.find(n); it != cache.end()) return it->second;
  }
  auto plan = build_plan(n);
  std::lock_guard lock(mutex);
  return cache.emplace(n, std::move(plan)).first->second;
}

void radix2_forward(const Plan& plan, std::span<cdouble> a) {
  const std::size_t n = plan.n;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < plan.bitrev[i]) std::swap(a[i], a[plan.bitrev[i]]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t j = 0; j < half; ++j) {
        const cdouble u = a[i + j];
        const cdouble v = cmul(a[i + j + half], plan.twiddle[j * step]);
        a[i + j] = u + v;
        a[i + j + half] = u - v;
      }
    }
  }
}

void bluestein_forward(const Plan& plan, std::span<cdouble> a) {
  const std::size_t n = plan.n;
  const std::size_t m = plan.kernel_fft.size();
  std::vector<cdouble> buf(m, cdouble{0.0, 0.0});
  for (std::size_t k = 0; k < n; ++k) buf[k] = cmul(a[k], plan.chirp[k]);
  radix2_forward(*plan.inner, buf);
  for (std::size_t k = 0; k < m; ++k) buf[k] = std::conj(cmul(buf[k], plan.kernel_fft[k]));
  radix2_forward(*plan.inner, buf);  // conj-forward-conj gives the inverse
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n; ++k) a[k] = cmul(std::conj(buf[k]) * inv_m, plan.chirp[k]);
}

// In-place transform of `lanes` sequences of length n stored side by side:
// element k of lane c sits at a[k * stride + c]. Radix-2 sizes run the
// butterflies across all lanes at once; other sizes go lane by lane.
void fft_lanes(cdouble* a, std::size_t n, std::size_t stride, std::size_t lanes, bool inverse,
               std::vector<cdouble>& scratch) {
  if (n <= 1) return;
  if (!is_pow2(n)) {
    scratch.resize(n);
    for (std::size_t c = 0; c < lanes; ++c) {
      for (std::size_t k = 0; k < n; ++k) scratch[k] = a[k * stride + c];
      fft(scratch, inverse);
      for (std::size_t k = 0; k < n; ++k) a[k * stride + c] = scratch[k];
    }
    return;
  }
  const auto plan = get_plan(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = plan->bitrev[i];
    if (i < r) std::swap_ranges(a + i * stride, a + i * stride + lanes, a + r * stride);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t j = 0; j < half; ++j) {
        const cdouble t = inverse ? std::conj(plan->twiddle[j * step]) : plan->twiddle[j * step];
        cdouble* x = a + (i + j) * stride;
        cdouble* y = a + (i + j + half) * stride;
        for (std::size_t c = 0; c < lanes; ++c) {
          const cdouble u = x[c];
          const cdouble v = cmul(y[c], t);
          x[c] = u + v;
          y[c] = u - v;
        }
      }
    }
  }
}

// Raw kernels over [outer, h, w, d] layouts. Complex buffers are interleaved.

std::vector<double> rfft2_raw(std::span<const double> x, std::size_t outer, std::size_t h, std::size_t w,
                              std::size_t d) {
  const std::size_t w2 = half_width(w);
  std::vector<double> out(outer * h * w2 * d * 2);
  std::vector<cdouble> line(w * d), scratch;
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = x.data() + o * h * w * d;
    auto* dst = reinterpret_cast<cdouble*>(out.data()) + o * h * w2 * d;
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t i = 0; i < w * d; ++i) line[i] = {src[r * w * d + i], 0.0};
      fft_lanes(line.data(), w, d, d, false, scratch);
      std::copy(line.begin(), line.begin() + static_cast<std::ptrdiff_t>(w2 * d), dst + r * w2 * d);
    }
    for (std::size_t l = 0; l < w2; ++l) fft_lanes(dst + l * d, h, w2 * d, d, false, scratch);
  }
  return out;
}

std::vector<double> irfft2_raw(std::span<const double> s, std::size_t outer, std::size_t h, std::size_t w,
                               std::size_t d) {
  const std::size_t w2 = half_width(w);
  const double norm = 1.0 / static_cast<double>(h * w);
  std::vector<double> out(outer * h * w * d);
  std::vector<cdouble> tmp(h * w2 * d), line(w * d), scratch;
  for (std::size_t o = 0; o < outer; ++o) {
    const auto* src = reinterpret_cast<const cdouble*>(s.data()) + o * h * w2 * d;
    double* dst = out.data() + o * h * w * d;
    std::copy(src, src + h * w2 * d, tmp.begin());
    for (std::size_t l = 0; l < w2; ++l) fft_lanes(tmp.data() + l * d, h, w2 * d, d, true, scratch);
    for (std::size_t r = 0; r < h; ++r) {
      const cdouble* row = tmp.data() + r * w2 * d;
      for (std::size_t c = 0; c < d; ++c) line[c] = {row[c].real(), 0.0};
      for (std::size_t l = 1; l < w2; ++l) {
        for (std::size_t c = 0; c < d; ++c) {
          const cdouble v = row[l * d + c];
          if (2 * l == w) {
            line[l * d + c] = {v.real(), 0.0};
          } else {
            line[l * d + c] = v;
            line[(w - l) * d + c] = std::conj(v);
          }
        }
      }
      fft_lanes(line.data(), w, d, d, true, scratch);
      for (std::size_t i = 0; i < w * d; ++i) dst[r * w * d + i] = line[i].real() * norm;
    }
  }
  return out;
}

// Multiplicity of a half-spectrum column in the full Hermitian plane.
double column_weight(std::size_t l, std::size_t w) { return (l == 0 || 2 * l == w) ? 1.0 : 2.0; }

struct GridDims {
  std::size_t outer, h, w, d;
};

GridDims grid_dims(const Shape& s, const char* op) {
  if (s.size() < 3) throw DimensionError(std::string(op) + " expects [..., h, w, d], got " + shape_str(s));
  const std::size_t h = s[s.size() - 3], w = s[s.size() - 2], d = s[s.size() - 1];
  return {shape_numel(s) / (h * w * d), h, w, d};
}

}  // namespace

void fft(std::span<cdouble> data, bool inverse) {
  const std::size_t n = data.size();
  if (n <= 1) return;
  if (inverse) {
    for (auto& v : data) v = std::conj(v);
  }
  const auto plan = get_plan(n);
  if (is_pow2(n)) {
    radix2_forward(*plan, data);
  } else {
    bluestein_forward(*plan, data);
  }
  if (inverse) {
    for (auto& v : data) v = std::conj(v);
  }
}

Spectrum rfft2(const Tensor& x) {
  if (x.is_complex()) throw DimensionError("rfft2 expects a real tensor");
  const auto [outer, h, w, d] = grid_dims(x.shape(), "rfft2");
  const std::size_t w2 = half_width(w);
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = w2;
  auto out = rfft2_raw(x.raw(), outer, h, w, d);
  Tensor data = autograd::record(
      "rfft2", std::move(out_shape), DType::complex128, std::move(out), {x},
      [outer, h, w, d, w2](std::span<const double> g, const GradSpans& gin) {
        std::vector<double> scaled(g.begin(), g.end());
        const double hw = static_cast<double>(h * w);
        for (std::size_t i = 0; i < scaled.size() / 2; ++i) {
          const std::size_t l = (i / d) % w2;
          const double f = hw / column_weight(l, w);
          scaled[2 * i] *= f;
          scaled[2 * i + 1] *= f;
        }
        const auto back = irfft2_raw(scaled, outer, h, w, d);
        for (std::size_t i = 0; i < back.size(); ++i) gin[0][i] += back[i];
      });
  return {h, w, std::move(data)};
}

Tensor irfft2(const Tensor& half, std::size_t w) {
  if (!half.is_complex()) throw DimensionError("irfft2 expects a complex spectrum");
  const auto [outer, h, w2, d] = grid_dims(half.shape(), "irfft2");
  if (w == 0 || half_width(w) != w2) {
    throw DimensionError("irfft2: width " + std::to_string(w) + " inconsistent with half spectrum " +
                         shape_str(half.shape()));
  }
  Shape out_shape = half.shape();
  out_shape[out_shape.size() - 2] = w;
  auto out = irfft2_raw(half.raw(), outer, h, w, d);
  return autograd::record("irfft2", std::move(out_shape), DType::real64, std::move(out), {half},
                          [outer, h, w, d, w2](std::span<const double> g, const GradSpans& gin) {
                            auto fwd = rfft2_raw(g, outer, h, w, d);
                            const double hw = static_cast<double>(h * w);
                            for (std::size_t i = 0; i < fwd.size() / 2; ++i) {
                              const std::size_t l = (i / d) % w2;
                              const double f = column_weight(l, w) / hw;
                              gin[0][2 * i] += f * fwd[2 * i];
                              gin[0][2 * i + 1] += f * fwd[2 * i + 1];
                            }
                          });
}

Tensor irfft2(const Spectrum& s) {
  if (s.data.dim(-3) != s.height) {
    throw DimensionError("spectrum height field disagrees with data " + shape_str(s.data.shape()));
  }
  return irfft2(s.data, s.full_width);
}

namespace {

Tensor naive_transform(const Tensor& x, double sign, double norm) {
  const auto [outer, h, w, d] = grid_dims(x.shape(), "naive_dft2");
  const std::size_t hw = h * w;
  std::vector<cdouble> in(outer * hw * d);
  const auto raw = x.raw();
  for (std::size_t i = 0; i < in.size(); ++i) {
    in[i] = x.is_complex() ? cdouble{raw[2 * i], raw[2 * i + 1]} : cdouble{raw[i], 0.0};
  }
  std::vector<cdouble> out(in.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < h; ++k) {
      for (std::size_t l = 0; l < w; ++l) {
        for (std::size_t c = 0; c < d; ++c) {
          cdouble acc{0.0, 0.0};
          for (std::size_t n = 0; n < h; ++n) {
            for (std::size_t m = 0; m < w; ++m) {
              // exact integer phase reduction before the trig call
              const std::size_t phase = (((k * n) % h) * w + ((l * m) % w) * h) % hw;
              const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(phase) /
                                   static_cast<double>(hw);
              acc += in[((o * h + n) * w + m) * d + c] * cdouble{std::cos(angle), std::sin(angle)};
            }
          }
          out[((o * h + k) * w + l) * d + c] = acc * norm;
        }
      }
    }
  }
  return Tensor(x.shape(), std::move(out));
}

}  // namespace

Tensor naive_dft2(const Tensor& x) { return naive_transform(x, -1.0, 1.0); }

Tensor naive_idft2(const Tensor& x) {
  const std::size_t h = x.dim(-3), w = x.dim(-2);
  return naive_transform(x, 1.0, 1.0 / static_cast<double>(h * w));
}

ModeSelection select_modes(std::size_t h, std::size_t w, double keep_fraction) {
  if (!(keep_fraction > 0.0) || keep_fraction > 1.0) {
    throw std::invalid_argument("keep_fraction must lie in (0, 1], got " + std::to_string(keep_fraction));
  }
  const auto kept_count = [keep_fraction](std::size_t n) {
    return static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(n) - 1e-9));
  };
  ModeSelection sel;
  sel.height = h;
  sel.full_width = w;
  const std::size_t radius = kept_count(h);
  for (std::size_t i = 0; i < h; ++i) {
    if (std::min(i, h - i) < radius) sel.rows.push_back(i);
  }
  sel.cols = std::min(std::max<std::size_t>(kept_count(half_width(w)), 1), half_width(w));
  return sel;
}

ReducedSpectrum truncate_modes(const Spectrum& s, double keep_fraction) {
  return truncate_modes(s, select_modes(s.height, s.full_width, keep_fraction));
}

ReducedSpectrum truncate_modes(const Spectrum& s, const ModeSelection& modes) {
  const auto [outer, h, w2, d] = grid_dims(s.data.shape(), "truncate_modes");
  if (h != modes.height || w2 != half_width(modes.full_width)) {
    throw DimensionError("mode selection does not match spectrum " + shape_str(s.data.shape()));
  }
  const std::size_t rows = modes.rows.size(), cols = modes.cols;
  std::vector<std::size_t> src;
  src.reserve(outer * rows * cols * d);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t r : modes.rows) {
      for (std::size_t l = 0; l < cols; ++l) {
        for (std::size_t c = 0; c < d; ++c) src.push_back(((o * h + r) * w2 + l) * d + c);
      }
    }
  }
  const auto raw = s.data.raw();
  std::vector<double> out(src.size() * 2);
  for (std::size_t i = 0; i < src.size(); ++i) {
    out[2 * i] = raw[2 * src[i]];
    out[2 * i + 1] = raw[2 * src[i] + 1];
  }
  Shape shape = s.data.shape();
  shape[shape.size() - 3] = rows;
  shape[shape.size() - 2] = cols;
  Tensor data = autograd::record("truncate_modes", std::move(shape), DType::complex128, std::move(out), {s.data},
                                 [src](std::span<const double> g, const GradSpans& gin) {
                                   for (std::size_t i = 0; i < src.size(); ++i) {
                                     gin[0][2 * src[i]] += g[2 * i];
                                     gin[0][2 * src[i] + 1] += g[2 * i + 1];
                                   }
                                 });
  return {modes, std::move(data)};
}

Spectrum pad_modes(const ReducedSpectrum& reduced) {
  const auto& modes = reduced.modes;
  const auto [outer, rows, cols, d] = grid_dims(reduced.data.shape(), "pad_modes");
  if (rows != modes.rows.size() || cols != modes.cols) {
    throw DimensionError("reduced spectrum shape disagrees with its mode selection");
  }
  const std::size_t h = modes.height, w2 = half_width(modes.full_width);
  std::vector<std::size_t> dst;
  dst.reserve(outer * rows * cols * d);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t r : modes.rows) {
      for (std::size_t l = 0; l < cols; ++l) {
        for (std::size_t c = 0; c < d; ++c) dst.push_back(((o * h + r) * w2 + l) * d + c);
      }
    }
  }
  const auto raw = reduced.data.raw();
  std::vector<double> out(outer * h * w2 * d * 2, 0.0);
  for (std::size_t i = 0; i < dst.size(); ++i) {
    out[2 * dst[i]] = raw[2 * i];
    out[2 * dst[i] + 1] = raw[2 * i + 1];
  }
  Shape shape = reduced.data.shape();
  shape[shape.size() - 3] = h;
  shape[shape.size() - 2] = w2;
  Tensor data = autograd::record("pad_modes", std::move(shape), DType::complex128, std::move(out), {reduced.data},
                                 [dst](std::span<const double> g, const GradSpans& gin) {
                                   for (std::size_t i = 0; i < dst.size(); ++i) {
                                     gin[0][2 * i] += g[2 * dst[i]];
                                     gin[0][2 * i + 1] += g[2 * dst[i] + 1];
                                   }
                                 });
  return {h, modes.full_width, std::move(data)};
}

Spectrum pad_modes(const ReducedSpectrum& reduced, std::size_t h, std::size_t w) {
  if (reduced.modes.height != h || reduced.modes.full_width != w) {
    throw DimensionError("pad_modes target " + std::to_string(h) + "x" + std::to_string(w) +
                         " differs from the truncated grid");
  }
  return pad_modes(reduced);
}

Tensor fourier_resample(const Tensor& x, std::size_t new_h, std::size_t new_w) {
  autograd::NoGradGuard no_grad;
  const auto [outer, h, w, d] = grid_dims(x.shape(), "fourier_resample");
  const Spectrum s = rfft2(x);
  const std::size_t w2 = half_width(w), nw2 = half_width(new_w);
  const long max_row = static_cast<long>(std::min((h - 1) / 2, (new_h - 1) / 2));
  const std::size_t max_col = std::min((w - 1) / 2, (new_w - 1) / 2);
  const double factor = static_cast<double>(new_h * new_w) / static_cast<double>(h * w);
  std::vector<double> out(outer * new_h * nw2 * d * 2, 0.0);
  const auto raw = s.data.raw();
  for (std::size_t o = 0; o < outer; ++o) {
    for (long f = -max_row; f <= max_row; ++f) {
      const std::size_t r_src = static_cast<std::size_t>((f + static_cast<long>(h)) % static_cast<long>(h));
      const std::size_t r_dst = static_cast<std::size_t>((f + static_cast<long>(new_h)) % static_cast<long>(new_h));
      for (std::size_t l = 0; l <= max_col; ++l) {
        for (std::size_t c = 0; c < d; ++c) {
          const std::size_t si = ((o * h + r_src) * w2 + l) * d + c;
          const std::size_t di = ((o * new_h + r_dst) * nw2 + l) * d + c;
          out[2 * di] = factor * raw[2 * si];
          out[2 * di + 1] = factor * raw[2 * si + 1];
        }
      }
    }
  }
  Shape shape = x.shape();
  shape[shape.size() - 3] = new_h;
  shape[shape.size() - 2] = nw2;
  return irfft2(Tensor::from_raw(std::move(shape), DType::complex128, std::move(out)), new_w);
}

}  // namespace afno::spectral
