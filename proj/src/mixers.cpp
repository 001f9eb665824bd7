#include "afno/mixers.hpp"

#include <cmath>
#include <stdexcept>

#include "afno/ops.hpp"

namespace afno {

namespace {

using autograd::GradSpans;

void require_grid(const Tensor& x, const char* op) {
  if (x.is_complex() || x.rank() < 3) {
    throw DimensionError(std::string(op) + " expects a real [..., h, w, d] tensor, got " +
                         dtype_name(x.dtype()) + " " + shape_str(x.shape()));
  }
}

Shape with_tail(Shape shape, std::size_t drop, const Shape& tail) {
  shape.resize(shape.size() - drop);
  shape.insert(shape.end(), tail.begin(), tail.end());
  return shape;
}

Tensor random_tensor(Shape shape, DType dtype, Rng& rng, double mean, double stddev) {
  Tensor t(std::move(shape), dtype);
  for (double& v : t.raw_mut()) v = rng.normal(mean, stddev);
  return t;
}

}  // namespace

MixerKind parse_mixer_kind(std::string_view name) {
  if (name == "sa") return MixerKind::sa;
  if (name == "gfn") return MixerKind::gfn;
  if (name == "fno") return MixerKind::fno;
  if (name == "afno") return MixerKind::afno;
  throw std::invalid_argument("unknown mixer kind '" + std::string(name) + "' (expected sa|gfn|fno|afno)");
}

const char* mixer_kind_name(MixerKind kind) {
  switch (kind) {
    case MixerKind::sa: return "sa";
    case MixerKind::gfn: return "gfn";
    case MixerKind::fno: return "fno";
    case MixerKind::afno: return "afno";
  }
  return "?";
}

BiasMode parse_bias_mode(std::string_view name) {
  if (name == "identity_residual" || name == "identity") return BiasMode::identity_residual;
  if (name == "conv1d_residual" || name == "conv1d") return BiasMode::conv1d_residual;
  throw std::invalid_argument("unknown bias mode '" + std::string(name) + "'");
}

const char* bias_mode_name(BiasMode mode) {
  return mode == BiasMode::identity_residual ? "identity_residual" : "conv1d_residual";
}

MixerKind kind_of(const MixerParams& params) {
  return std::visit(
      [](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, AttentionParams>) return MixerKind::sa;
        if constexpr (std::is_same_v<T, GfnParams>) return MixerKind::gfn;
        if constexpr (std::is_same_v<T, FnoParams>) return MixerKind::fno;
        if constexpr (std::is_same_v<T, AfnoParams>) return MixerKind::afno;
      },
      params);
}

Tensor self_attention(const Tensor& x, const AttentionParams& p) {
  require_grid(x, "self_attention");
  const std::size_t d = x.dim(-1);
  const std::size_t heads = p.num_heads;
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("self_attention: " + std::to_string(heads) + " heads do not divide d=" + std::to_string(d));
  }
  if (p.wq.shape() != Shape{d, d} || p.wk.shape() != Shape{d, d} || p.wv.shape() != Shape{d, d}) {
    throw DimensionError("self_attention: projections must be [" + std::to_string(d) + ", " + std::to_string(d) + "]");
  }
  const std::size_t n = x.dim(-3) * x.dim(-2);
  const std::size_t batch = x.numel() / (n * d);
  const std::size_t dh = d / heads;
  const Tensor tokens = reshape(x, {batch, n, d});
  // 1/sqrt(d_head) folded into the queries
  Tensor q = scale(matmul(tokens, p.wq), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor k = matmul(tokens, p.wk);
  Tensor v = matmul(tokens, p.wv);
  Tensor out;
  if (heads == 1) {
    const Tensor weights = softmax_last(matmul(q, transpose_last2(k)));
    out = matmul(weights, v);
  } else {
    const auto split = [&](const Tensor& t) { return permute(reshape(t, {batch, n, heads, dh}), {0, 2, 1, 3}); };
    q = split(q);
    k = split(k);
    v = split(v);
    const Tensor weights = softmax_last(matmul(q, transpose_last2(k)));
    out = reshape(permute(matmul(weights, v), {0, 2, 1, 3}), {batch, n, d});
  }
  return reshape(out, x.shape());
}

Tensor gfn_mix(const Tensor& x, const GfnParams& p) {
  require_grid(x, "gfn_mix");
  const std::size_t h = x.dim(-3), w = x.dim(-2), d = x.dim(-1);
  const Shape expected{h, spectral::half_width(w), d};
  if (p.filter.shape() != expected) {
    throw DimensionError("gfn_mix: filter " + shape_str(p.filter.shape()) + " does not match the " +
                         std::to_string(h) + "x" + std::to_string(w) + " grid (expected " + shape_str(expected) +
                         "); resize the filter first");
  }
  const spectral::Spectrum s = spectral::rfft2(x);
  return spectral::irfft2(mul(s.data, p.filter), w);
}

GfnParams gfn_filter_resize(const GfnParams& p, std::size_t new_h, std::size_t new_w) {
  if (new_h < 2 || new_w < 2) {
    throw std::invalid_argument("gfn_filter_resize: target grid must be at least 2x2, got " +
                                std::to_string(new_h) + "x" + std::to_string(new_w));
  }
  const std::size_t h = p.filter.dim(0), w2 = p.filter.dim(1), d = p.filter.dim(2);
  const std::size_t nh = new_h, nw2 = spectral::half_width(new_w);
  struct Tap {
    std::size_t src0, src1;
    double frac;
  };
  const auto taps = [](std::size_t from, std::size_t to) {
    std::vector<Tap> out(to);
    for (std::size_t i = 0; i < to; ++i) {
      if (from == 1 || to == 1) {
        out[i] = {0, 0, 0.0};
        continue;
      }
      const double pos = static_cast<double>(i) * static_cast<double>(from - 1) / static_cast<double>(to - 1);
      const std::size_t lo = std::min(static_cast<std::size_t>(std::floor(pos)), from - 1);
      const std::size_t hi = std::min(lo + 1, from - 1);
      out[i] = {lo, hi, pos - static_cast<double>(lo)};
    }
    return out;
  };
  const auto ty = taps(h, nh);
  const auto tx = taps(w2, nw2);
  struct Contribution {
    std::size_t dst, src;
    double weight;
  };
  std::vector<Contribution> plan;
  plan.reserve(nh * nw2 * 4);
  for (std::size_t i = 0; i < nh; ++i) {
    for (std::size_t j = 0; j < nw2; ++j) {
      const std::size_t dst = i * nw2 + j;
      const auto& a = ty[i];
      const auto& b = tx[j];
      plan.push_back({dst, a.src0 * w2 + b.src0, (1.0 - a.frac) * (1.0 - b.frac)});
      plan.push_back({dst, a.src0 * w2 + b.src1, (1.0 - a.frac) * b.frac});
      plan.push_back({dst, a.src1 * w2 + b.src0, a.frac * (1.0 - b.frac)});
      plan.push_back({dst, a.src1 * w2 + b.src1, a.frac * b.frac});
    }
  }
  const auto raw = p.filter.raw();
  std::vector<double> out(nh * nw2 * d * 2, 0.0);
  for (const auto& c : plan) {
    for (std::size_t ch = 0; ch < 2 * d; ++ch) out[c.dst * 2 * d + ch] += c.weight * raw[c.src * 2 * d + ch];
  }
  Tensor filter = autograd::record("gfn_filter_resize", Shape{nh, nw2, d}, DType::complex128, std::move(out),
                                   {p.filter}, [plan, d](std::span<const double> g, const GradSpans& gin) {
                                     for (const auto& c : plan) {
                                       for (std::size_t ch = 0; ch < 2 * d; ++ch) {
                                         gin[0][c.src * 2 * d + ch] += c.weight * g[c.dst * 2 * d + ch];
                                       }
                                     }
                                   });
  return {std::move(filter)};
}

Tensor fno_mix(const Tensor& x, const FnoParams& p) {
  require_grid(x, "fno_mix");
  const std::size_t h = x.dim(-3), w = x.dim(-2), d = x.dim(-1);
  const std::size_t w2 = spectral::half_width(w);
  const Shape expected{h, w2, d, d};
  if (p.weight.shape() != expected) {
    throw DimensionError("fno_mix: weight " + shape_str(p.weight.shape()) + " does not match grid, expected " +
                         shape_str(expected));
  }
  const spectral::Spectrum s = spectral::rfft2(x);
  const Shape spec_shape = s.data.shape();
  const Tensor rows = reshape(s.data, with_tail(spec_shape, 1, {1, d}));
  const Tensor mixed = reshape(matmul(rows, p.weight), spec_shape);
  return spectral::irfft2(mixed, w);
}

Tensor soft_shrink(const Tensor& z, double lambda) {
  if (lambda < 0.0 || std::isnan(lambda)) throw std::invalid_argument("soft_shrink: lambda must be >= 0");
  const auto raw = z.raw();
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double a = std::abs(raw[i]);
    out[i] = a > lambda ? std::copysign(a - lambda, raw[i]) : 0.0;
  }
  if (auto* t = autograd::PieceTracker::active()) {
    for (double v : raw) t->note(std::abs(v) > lambda ? (v > 0.0 ? 1 : 2) : 0);
  }
  return autograd::record("soft_shrink", z.shape(), z.dtype(), std::move(out), {z},
                          [z, lambda](std::span<const double> g, const GradSpans& gin) {
                            const auto raw = z.raw();
                            for (std::size_t i = 0; i < g.size(); ++i) {
                              if (std::abs(raw[i]) > lambda) gin[0][i] += g[i];
                            }
                          });
}

Tensor block_mlp(const Tensor& z, const AfnoParams& p) {
  const std::size_t k = p.blocks(), bs = p.block_size();
  if (!z.is_complex() || z.rank() < 2 || z.dim(-2) != k || z.dim(-1) != bs) {
    throw DimensionError("block_mlp expects complex [..., " + std::to_string(k) + ", " + std::to_string(bs) +
                         "], got " + shape_str(z.shape()));
  }
  const Shape shape = z.shape();
  const Tensor rows = reshape(z, with_tail(shape, 2, {k, 1, bs}));
  Tensor hidden = add(matmul(rows, p.w1), reshape(p.b1, {k, 1, bs}));
  if (p.activation == Activation::relu) hidden = relu(hidden);
  const Tensor out = add(matmul(hidden, p.w2), reshape(p.b2, {k, 1, bs}));
  return reshape(out, shape);
}

Tensor circular_conv1d_depthwise(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_grid(x, "circular_conv1d_depthwise");
  const std::size_t d = x.dim(-1);
  const std::size_t n = x.dim(-3) * x.dim(-2);
  const std::size_t outer = x.numel() / (n * d);
  if (weight.shape() != Shape{3, d} || bias.numel() != d || weight.is_complex() || bias.is_complex()) {
    throw DimensionError("circular_conv1d_depthwise: weight must be real [3, d] and bias [d], got " +
                         shape_str(weight.shape()) + " and " + shape_str(bias.shape()));
  }
  const auto xr = x.raw();
  const auto wr = weight.raw();
  const auto br = bias.raw();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = xr.data() + o * n * d;
    double* dst = out.data() + o * n * d;
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t prev = (t + n - 1) % n, next = (t + 1) % n;
      for (std::size_t c = 0; c < d; ++c) {
        dst[t * d + c] = wr[c] * src[prev * d + c] + wr[d + c] * src[t * d + c] + wr[2 * d + c] * src[next * d + c] +
                         br[c];
      }
    }
  }
  return autograd::record(
      "conv1d_depthwise", x.shape(), DType::real64, std::move(out), {x, weight, bias},
      [x, weight, outer, n, d](std::span<const double> g, const GradSpans& gin) {
        const auto xr = x.raw();
        const auto wr = weight.raw();
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = xr.data() + o * n * d;
          const double* go = g.data() + o * n * d;
          for (std::size_t t = 0; t < n; ++t) {
            const std::size_t prev = (t + n - 1) % n, next = (t + 1) % n;
            for (std::size_t c = 0; c < d; ++c) {
              const double gv = go[t * d + c];
              if (!gin[0].empty()) {
                double* gx = gin[0].data() + o * n * d;
                gx[prev * d + c] += wr[c] * gv;
                gx[t * d + c] += wr[d + c] * gv;
                gx[next * d + c] += wr[2 * d + c] * gv;
              }
              if (!gin[1].empty()) {
                gin[1][c] += src[prev * d + c] * gv;
                gin[1][d + c] += src[t * d + c] * gv;
                gin[1][2 * d + c] += src[next * d + c] * gv;
              }
              if (!gin[2].empty()) gin[2][c] += gv;
            }
          }
        }
      });
}

Tensor afno_mix(const Tensor& x, const AfnoParams& p, ShrinkProbe* probe) {
  require_grid(x, "afno_mix");
  const std::size_t h = x.dim(-3), w = x.dim(-2), d = x.dim(-1);
  const std::size_t k = p.blocks();
  if (k == 0 || d % k != 0 || p.channels() != d) {
    throw DimensionError("afno_mix: " + std::to_string(k) + " blocks of size " + std::to_string(p.block_size()) +
                         " do not tile d=" + std::to_string(d));
  }
  const spectral::Spectrum s = spectral::rfft2(x);
  const bool truncate = p.keep_fraction < 1.0;
  const auto modes = spectral::select_modes(h, w, p.keep_fraction);
  Tensor coeffs = truncate ? spectral::truncate_modes(s, modes).data : s.data;

  const Shape spec_shape = coeffs.shape();
  const Tensor blocks = reshape(coeffs, with_tail(spec_shape, 1, {k, d / k}));
  const Tensor mixed = reshape(block_mlp(blocks, p), spec_shape);
  if (probe) {
    probe->modes = modes;
    probe->pre_shrink = mixed.detach();
    probe->lambda = p.lambda;
  }
  Tensor shrunk = soft_shrink(mixed, p.lambda);
  if (truncate) shrunk = spectral::pad_modes({modes, shrunk}).data;
  const Tensor spatial = spectral::irfft2(shrunk, w);
  if (p.bias_mode == BiasMode::conv1d_residual) {
    return add(spatial, circular_conv1d_depthwise(x, p.conv_weight, p.conv_bias));
  }
  return add(spatial, x);
}

Tensor mix(const Tensor& x, const MixerParams& params, ShrinkProbe* probe) {
  return std::visit(
      [&](const auto& p) -> Tensor {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, AttentionParams>) return self_attention(x, p);
        if constexpr (std::is_same_v<T, GfnParams>) return gfn_mix(x, p);
        if constexpr (std::is_same_v<T, FnoParams>) return fno_mix(x, p);
        if constexpr (std::is_same_v<T, AfnoParams>) return afno_mix(x, p, probe);
      },
      params);
}

AttentionParams make_attention(std::size_t d, std::size_t num_heads, Rng& rng) {
  if (num_heads == 0 || d % num_heads != 0) throw std::invalid_argument("attention heads must divide d");
  const double stddev = 1.0 / std::sqrt(static_cast<double>(d));
  AttentionParams p;
  p.wq = random_tensor({d, d}, DType::real64, rng, 0.0, stddev);
  p.wk = random_tensor({d, d}, DType::real64, rng, 0.0, stddev);
  p.wv = random_tensor({d, d}, DType::real64, rng, 0.0, stddev);
  p.num_heads = num_heads;
  return p;
}

GfnParams make_gfn(std::size_t h, std::size_t w, std::size_t d, Rng& rng) {
  Tensor filter({h, spectral::half_width(w), d}, DType::complex128);
  auto raw = filter.raw_mut();
  for (std::size_t i = 0; i < raw.size(); i += 2) {
    raw[i] = 1.0 + rng.normal(0.0, 0.01);
    raw[i + 1] = rng.normal(0.0, 0.01);
  }
  return {filter};
}

FnoParams make_fno(std::size_t h, std::size_t w, std::size_t d, Rng& rng) {
  const std::size_t w2 = spectral::half_width(w);
  Tensor weight = random_tensor({h, w2, d, d}, DType::complex128, rng, 0.0, 0.01 / std::sqrt(static_cast<double>(d)));
  auto raw = weight.raw_mut();
  for (std::size_t mode = 0; mode < h * w2; ++mode) {
    for (std::size_t i = 0; i < d; ++i) raw[2 * ((mode * d + i) * d + i)] += 1.0;
  }
  return {weight};
}

AfnoParams make_afno(std::size_t d, std::size_t blocks, double lambda, double keep_fraction, BiasMode bias_mode,
                     Rng& rng) {
  if (blocks == 0 || d % blocks != 0) {
    throw std::invalid_argument("afno: block count " + std::to_string(blocks) + " must divide d=" + std::to_string(d));
  }
  if (lambda < 0.0) throw std::invalid_argument("afno: lambda must be >= 0");
  (void)spectral::select_modes(1, 1, keep_fraction);  // validates the fraction
  const std::size_t bs = d / blocks;
  const double stddev = 0.02 / std::sqrt(static_cast<double>(bs));
  AfnoParams p;
  p.w1 = random_tensor({blocks, bs, bs}, DType::complex128, rng, 0.0, stddev);
  p.b1 = random_tensor({blocks, bs}, DType::complex128, rng, 0.0, 0.02);
  p.w2 = random_tensor({blocks, bs, bs}, DType::complex128, rng, 0.0, stddev);
  p.b2 = random_tensor({blocks, bs}, DType::complex128, rng, 0.0, 0.02);
  p.lambda = lambda;
  p.keep_fraction = keep_fraction;
  p.bias_mode = bias_mode;
  if (bias_mode == BiasMode::conv1d_residual) {
    p.conv_weight = Tensor({3, d});
    auto cw = p.conv_weight.raw_mut();
    for (std::size_t c = 0; c < d; ++c) cw[d + c] = 1.0;  // starts as the identity residual
    p.conv_bias = Tensor({d});
  }
  return p;
}

std::vector<NamedParam> named_parameters(const MixerParams& params) {
  return std::visit(
      [](const auto& p) -> std::vector<NamedParam> {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, AttentionParams>) return {{"wq", p.wq}, {"wk", p.wk}, {"wv", p.wv}};
        if constexpr (std::is_same_v<T, GfnParams>) return {{"filter", p.filter}};
        if constexpr (std::is_same_v<T, FnoParams>) return {{"weight", p.weight}};
        if constexpr (std::is_same_v<T, AfnoParams>) {
          std::vector<NamedParam> out{{"w1", p.w1}, {"b1", p.b1}, {"w2", p.w2}, {"b2", p.b2}};
          if (p.bias_mode == BiasMode::conv1d_residual) {
            out.push_back({"conv_weight", p.conv_weight});
            out.push_back({"conv_bias", p.conv_bias});
          }
          return out;
        }
      },
      params);
}

std::size_t parameter_count(const MixerParams& params) {
  std::size_t total = 0;
  for (const auto& np : named_parameters(params)) total += np.tensor.raw().size();
  return total;
}

}  // namespace afno
