#include <doctest.h>

#include <cmath>
#include <limits>

#include "afno/analysis.hpp"
#include "afno/mixers.hpp"
#include "afno/ops.hpp"
#include "helpers.hpp"

using namespace afno;
using testutil::attention_oracle;
using testutil::bit_equal;
using testutil::max_abs_diff;
using testutil::random_complex;
using testutil::random_real;

namespace {

AfnoParams zero_afno(std::size_t d, std::size_t k) {
  Rng rng(0);
  AfnoParams p = make_afno(d, k, 0.0, 1.0, BiasMode::identity_residual, rng);
  for (Tensor* t : {&p.w1, &p.w2, &p.b1, &p.b2}) {
    for (double& v : t->raw_mut()) v = 0.0;
  }
  return p;
}

// circular shift of a [h, w, d] grid by (dy, dx)
Tensor roll(const Tensor& x, std::size_t dy, std::size_t dx) {
  const std::size_t h = x.dim(0), w = x.dim(1), d = x.dim(2);
  Tensor out(x.shape());
  auto o = out.raw_mut();
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t c = 0; c < d; ++c) o[(((i + dy) % h) * w + (j + dx) % w) * d + c] = x.real_at((i * w + j) * d + c);
  return out;
}

// per-block affine -> component relu -> affine, by loops
std::vector<cdouble> block_mlp_oracle(const Tensor& z, const AfnoParams& p) {
  const std::size_t k = p.blocks(), bs = p.block_size(), modes = z.numel() / (k * bs);
  const auto relu_c = [](cdouble v) { return cdouble(std::max(v.real(), 0.0), std::max(v.imag(), 0.0)); };
  std::vector<cdouble> out(z.numel());
  for (std::size_t m = 0; m < modes; ++m)
    for (std::size_t b = 0; b < k; ++b) {
      std::vector<cdouble> hid(bs);
      for (std::size_t j = 0; j < bs; ++j) {
        cdouble acc = p.b1.complex_at(b * bs + j);
        for (std::size_t i = 0; i < bs; ++i) acc += z.complex_at((m * k + b) * bs + i) * p.w1.complex_at((b * bs + i) * bs + j);
        hid[j] = p.activation == Activation::relu ? relu_c(acc) : acc;
      }
      for (std::size_t j = 0; j < bs; ++j) {
        cdouble acc = p.b2.complex_at(b * bs + j);
        for (std::size_t i = 0; i < bs; ++i) acc += hid[i] * p.w2.complex_at((b * bs + i) * bs + j);
        out[(m * k + b) * bs + j] = acc;
      }
    }
  return out;
}

}  // namespace

TEST_CASE("attention: single token returns x Wv") {
  Rng rng(1);
  const AttentionParams p = make_attention(4, 1, rng);
  const Tensor x = random_real({1, 1, 4}, rng);
  CHECK(max_abs_diff(self_attention(x, p), reshape(matmul(reshape(x, {1, 4}), p.wv), {1, 1, 4})) < 1e-14);
}

TEST_CASE("attention: zero query and key give uniform weights") {
  Rng rng(2);
  AttentionParams p = make_attention(4, 2, rng);
  for (double& v : p.wq.raw_mut()) v = 0.0;
  for (double& v : p.wk.raw_mut()) v = 0.0;
  const Tensor x = random_real({2, 3, 4}, rng);
  const Tensor y = self_attention(x, p);
  const Tensor want = matmul(reshape(mean_axis(reshape(x, {6, 4}), 0), {1, 4}), p.wv);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(y.real_at(t * 4 + j) - want.real_at(j)) < 1e-14);
}

TEST_CASE("attention matches the kernel-summation oracle") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const AttentionParams p = make_attention(4, 1, rng);
    for (auto shape : {Shape{1, 3, 4}, Shape{2, 4, 4}}) {
      const Tensor x = random_real(shape, rng);
      const auto ref = attention_oracle(x, p);
      const Tensor y = self_attention(x, p);
      double m = 0.0;
      for (std::size_t i = 0; i < ref.size(); ++i) m = std::max(m, std::abs(ref[i] - y.real_at(i)));
      CHECK(m < 1e-12);
    }
  }
}

TEST_CASE("attention is permutation equivariant and checks head divisibility") {
  Rng rng(3);
  const AttentionParams p = make_attention(6, 2, rng);
  const Tensor x = random_real({1, 5, 6}, rng);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Tensor xp({1, 5, 6});
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t c = 0; c < 6; ++c) xp.raw_mut()[t * 6 + c] = x.real_at(perm[t] * 6 + c);
  const Tensor y = self_attention(x, p), yp = self_attention(xp, p);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t c = 0; c < 6; ++c) CHECK(std::abs(yp.real_at(t * 6 + c) - y.real_at(perm[t] * 6 + c)) < 1e-12);
  CHECK_THROWS_AS(make_attention(6, 4, rng), std::invalid_argument);
  AttentionParams bad = p;
  bad.num_heads = 4;
  CHECK_THROWS(self_attention(x, bad));
}

TEST_CASE("gfn: unit and zero filters") {
  Rng rng(4);
  GfnParams p = make_gfn(4, 6, 3, rng);
  const Tensor x = random_real({4, 6, 3}, rng);
  for (std::size_t i = 0; i < p.filter.raw().size(); ++i) p.filter.raw_mut()[i] = i % 2 == 0 ? 1.0 : 0.0;
  CHECK(max_abs_diff(gfn_mix(x, p), x) < 1e-12);
  for (double& v : p.filter.raw_mut()) v = 0.0;
  CHECK(max_abs_diff(gfn_mix(x, p), Tensor({4, 6, 3})) == 0.0);
}

TEST_CASE("gfn equals circular depthwise convolution with the filter's kernel") {
  const std::size_t h = 8, w = 8, d = 3;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed + 1000);
    GfnParams p{random_complex({h, w / 2 + 1, d}, rng)};
    const Tensor x = random_real({h, w, d}, rng);
    const Tensor kernel = spectral::irfft2(p.filter, w);
    // the gate acts on the half spectrum; its real kernel is what the inverse transform keeps
    const Tensor y = gfn_mix(x, GfnParams{spectral::rfft2(kernel).data});
    const Tensor y_direct = gfn_mix(x, p);
    double m = 0.0, m2 = 0.0;
    for (std::size_t a = 0; a < h; ++a)
      for (std::size_t b = 0; b < w; ++b)
        for (std::size_t c = 0; c < d; ++c) {
          double acc = 0.0;
          for (std::size_t s = 0; s < h; ++s)
            for (std::size_t t = 0; t < w; ++t)
              acc += kernel.real_at((s * w + t) * d + c) * x.real_at((((a + h - s) % h) * w + (b + w - t) % w) * d + c);
          m = std::max(m, std::abs(acc - y.real_at((a * w + b) * d + c)));
          m2 = std::max(m2, std::abs(acc - y_direct.real_at((a * w + b) * d + c)));
        }
    CHECK(m < 1e-9);
    CHECK(m2 < 1e-9);
  }
}

TEST_CASE("gfn needs a resized filter at a new resolution") {
  Rng rng(5);
  const GfnParams p = make_gfn(4, 4, 2, rng);
  const Tensor x = random_real({8, 8, 2}, rng);
  CHECK_THROWS_AS(gfn_mix(x, p), DimensionError);
  const GfnParams r = gfn_filter_resize(p, 8, 8);
  CHECK(r.filter.shape() == Shape{8, 5, 2});
  CHECK(gfn_mix(x, r).shape() == x.shape());
}

TEST_CASE("gfn filter resize examples") {
  Rng rng(6);
  const GfnParams p = make_gfn(4, 6, 2, rng);
  CHECK(bit_equal(gfn_filter_resize(p, 4, 6).filter, p.filter));

  GfnParams c{Tensor({3, 4, 2}, DType::complex128)};
  for (std::size_t i = 0; i < c.filter.raw().size(); i += 2) {
    c.filter.raw_mut()[i] = 0.7;
    c.filter.raw_mut()[i + 1] = -0.2;
  }
  for (auto [nh, nw] : std::vector<std::pair<std::size_t, std::size_t>>{{5, 9}, {2, 2}, {16, 16}}) {
    const GfnParams r = gfn_filter_resize(c, nh, nw);
    for (cdouble z : r.filter.complex_values()) CHECK(std::abs(z - cdouble(0.7, -0.2)) < 1e-15);
  }

  GfnParams q{random_complex({2, 2, 1}, rng)};
  const GfnParams r = gfn_filter_resize(q, 3, 4);  // [2, 2] -> [3, 3] grid
  REQUIRE(r.filter.shape() == Shape{3, 3, 1});
  const cdouble avg = (q.filter.complex_at(0) + q.filter.complex_at(1) + q.filter.complex_at(2) + q.filter.complex_at(3)) / 4.0;
  CHECK(std::abs(r.filter.complex_at(4) - avg) < 1e-15);
  CHECK(r.filter.complex_at(0) == q.filter.complex_at(0));
  CHECK(r.filter.complex_at(8) == q.filter.complex_at(3));
  CHECK_THROWS_AS(gfn_filter_resize(q, 1, 4), std::invalid_argument);
}

TEST_CASE("gfn filter resize is differentiable") {
  Rng rng(7);
  GfnParams q{random_complex({3, 3, 2}, rng)};
  const Tensor r = random_real({5, 4, 2, 2}, rng);
  CHECK(grad_check([&](const Tensor&) { return sum(mul(as_real(gfn_filter_resize(q, 5, 6).filter), r)); }, q.filter) <
        1e-6);
}

TEST_CASE("fno: identity matrices, diagonal equals gfn bit for bit") {
  Rng rng(8);
  const std::size_t h = 4, w = 5, d = 3;
  FnoParams p = make_fno(h, w, d, rng);
  const Tensor x = random_real({h, w, d}, rng);
  auto raw = p.weight.raw_mut();
  std::fill(raw.begin(), raw.end(), 0.0);
  const std::size_t modes = h * (w / 2 + 1);
  for (std::size_t m = 0; m < modes; ++m)
    for (std::size_t c = 0; c < d; ++c) raw[2 * ((m * d + c) * d + c)] = 1.0;
  CHECK(max_abs_diff(fno_mix(x, p), x) < 1e-12);

  GfnParams g{random_complex({h, w / 2 + 1, d}, rng)};
  std::fill(raw.begin(), raw.end(), 0.0);
  for (std::size_t m = 0; m < modes; ++m)
    for (std::size_t c = 0; c < d; ++c) {
      raw[2 * ((m * d + c) * d + c)] = g.filter.raw()[2 * (m * d + c)];
      raw[2 * ((m * d + c) * d + c) + 1] = g.filter.raw()[2 * (m * d + c) + 1];
    }
  CHECK(bit_equal(fno_mix(x, p), gfn_mix(x, g)));
}

TEST_CASE("fno matches naive DFT, channel matmul, naive inverse") {
  Rng rng(9);
  const std::size_t h = 4, w = 4, d = 2;
  const FnoParams p{random_complex({h, w / 2 + 1, d, d}, rng)};
  const Tensor x = random_real({h, w, d}, rng);
  // full-plane weights from the half-plane ones by Hermitian extension
  const auto full = testutil::dft2_loop(testutil::to_complex(x), h, w, d, false);
  std::vector<cdouble> mixed(full.size());
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const bool stored = j <= w / 2;
      const std::size_t si = stored ? i : (h - i) % h, sj = stored ? j : w - j;
      for (std::size_t o = 0; o < d; ++o) {
        cdouble acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          const cdouble wv = p.weight.complex_at(((si * (w / 2 + 1) + sj) * d + c) * d + o);
          const cdouble zv = full[(i * w + j) * d + c];
          acc += stored ? zv * wv : std::conj(std::conj(zv) * wv);
        }
        mixed[(i * w + j) * d + o] = acc;
      }
    }
  // DC and Nyquist columns are mixed independently at i and -i; the real inverse
  // keeps the Hermitian part, so compare against the symmetrized spectrum
  const Tensor y = fno_mix(x, p);
  std::vector<cdouble> sym(full.size());
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t c = 0; c < d; ++c) {
        const cdouble a = mixed[(i * w + j) * d + c];
        const cdouble b = std::conj(mixed[(((h - i) % h) * w + (w - j) % w) * d + c]);
        sym[(i * w + j) * d + c] = 0.5 * (a + b);
      }
  const auto ref = testutil::dft2_loop(sym, h, w, d, true);
  double m = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) m = std::max(m, std::abs(ref[i].real() - y.real_at(i)));
  CHECK(m < 1e-10);
}

TEST_CASE("soft shrink examples") {
  Rng rng(10);
  const Tensor z = random_complex({5, 3}, rng);
  CHECK(bit_equal(soft_shrink(z, 0.0), z));
  const Tensor s = soft_shrink(Tensor({1}, std::vector<cdouble>{{0.5, -0.05}}), 0.1);
  CHECK(std::abs(s.complex_at(0) - cdouble(0.4, 0.0)) < 1e-15);
  CHECK(s.complex_at(0).imag() == 0.0);
  const Tensor big = random_complex({1000}, rng);
  std::size_t zeros = 0;
  const Tensor shrunk = soft_shrink(big, 1.0);
  for (double v : shrunk.raw()) zeros += v == 0.0;
  CHECK(zeros == 2000);
  CHECK_THROWS_AS(soft_shrink(z, -0.1), std::invalid_argument);
  Tensor g = random_complex({4, 3}, rng);
  const Tensor r = random_real({4, 3, 2}, rng);
  CHECK(grad_check([&](const Tensor&) { return sum(mul(as_real(soft_shrink(g, 0.05)), r)); }, g) < 1e-6);
}

TEST_CASE("block mlp matches loops and the affine example") {
  Rng rng(11);
  AfnoParams p = make_afno(8, 2, 0.0, 1.0, BiasMode::identity_residual, rng);
  for (double& v : p.w1.raw_mut()) v = rng.uniform(-1, 1);
  for (double& v : p.b1.raw_mut()) v = rng.uniform(-1, 1);
  const Tensor z = random_complex({3, 2, 2, 4}, rng);
  const auto ref = block_mlp_oracle(z, p);
  const Tensor y = block_mlp(z, p);
  double m = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) m = std::max(m, std::abs(ref[i] - y.complex_at(i)));
  CHECK(m < 1e-14);

  // W1 = W2 = I, large positive b1, b2 = 0 -> z + b1
  AfnoParams q = zero_afno(8, 2);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 4; ++i) {
      q.w1.raw_mut()[2 * ((b * 4 + i) * 4 + i)] = 1.0;
      q.w2.raw_mut()[2 * ((b * 4 + i) * 4 + i)] = 1.0;
    }
  for (std::size_t i = 0; i < q.b1.raw().size(); ++i) q.b1.raw_mut()[i] = 10.0 + static_cast<double>(i);
  const Tensor yq = block_mlp(z, q);
  for (std::size_t i = 0; i < z.numel(); ++i) {
    CHECK(std::abs(yq.complex_at(i) - (z.complex_at(i) + q.b1.complex_at(i % 8))) < 1e-13);
  }

  AfnoParams bad = p;
  CHECK_THROWS_AS(block_mlp(random_complex({3, 4, 2}, rng), bad), DimensionError);
}

TEST_CASE("block mlp gradients") {
  Rng rng(12);
  AfnoParams p = make_afno(8, 2, 0.0, 1.0, BiasMode::identity_residual, rng);
  for (Tensor* t : {&p.w1, &p.w2, &p.b1, &p.b2}) {
    for (double& v : t->raw_mut()) v = rng.uniform(-1, 1);
  }
  const Tensor z = random_complex({3, 2, 4}, rng);
  const Tensor target = random_real({3, 2, 4, 2}, rng);
  const ScalarFn f = [&](const Tensor&) { return mse(as_real(block_mlp(z, p)), target); };
  for (const auto& np : named_parameters(MixerParams{p})) CHECK(grad_check(f, np.tensor) < 1e-5);
}

TEST_CASE("afno with block size one is a channel gate equal to gfn") {
  const std::size_t h = 6, w = 6, d = 4;
  Rng rng(13);
  AfnoParams p = zero_afno(d, d);
  GfnParams g{Tensor({h, w / 2 + 1, d}, DType::complex128)};
  for (std::size_t c = 0; c < d; ++c) {
    p.w1.raw_mut()[2 * c] = 1.0;
    const cdouble gate(rng.uniform(-1, 1), rng.uniform(-1, 1));
    p.w2.raw_mut()[2 * c] = gate.real();
    p.w2.raw_mut()[2 * c + 1] = gate.imag();
    for (std::size_t m = 0; m < h * (w / 2 + 1); ++m) {
      g.filter.raw_mut()[2 * (m * d + c)] = gate.real();
      g.filter.raw_mut()[2 * (m * d + c) + 1] = gate.imag();
    }
  }
  // input with a real, positive, Hermitian spectrum so the ReLU never clips
  std::vector<cdouble> full(h * w * d);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t c = 0; c < d; ++c) {
        const std::size_t a = (i * w + j) * d + c, b = (((h - i) % h) * w + (w - j) % w) * d + c;
        full[a] = b < a ? full[b] : cdouble(1.0 + rng.uniform(0, 1), 0.0);
      }
  const auto xs = testutil::dft2_loop(full, h, w, d, true);
  Tensor x({h, w, d});
  for (std::size_t i = 0; i < xs.size(); ++i) x.raw_mut()[i] = xs[i].real();
  CHECK(max_abs_diff(sub(afno_mix(x, p), x), gfn_mix(x, g)) < 1e-12);
}

TEST_CASE("afno: residual passthrough and total shrinkage") {
  Rng rng(14);
  const Tensor x = random_real({4, 5, 8}, rng);
  CHECK(bit_equal(afno_mix(x, zero_afno(8, 2)), x));

  AfnoParams p = make_afno(8, 2, std::numeric_limits<double>::infinity(), 1.0, BiasMode::identity_residual, rng);
  CHECK(bit_equal(afno_mix(x, p), x));
  AfnoParams c = make_afno(8, 2, 1e300, 1.0, BiasMode::conv1d_residual, rng);
  for (double& v : c.conv_weight.raw_mut()) v = rng.uniform(-1, 1);
  CHECK(bit_equal(afno_mix(x, c), circular_conv1d_depthwise(x, c.conv_weight, c.conv_bias)));
}

TEST_CASE("afno pipeline equals its composition") {
  Rng rng(15);
  for (double keep : {1.0, 0.5}) {
    AfnoParams p = make_afno(4, 2, 0.01, keep, BiasMode::identity_residual, rng);
    for (Tensor* t : {&p.w1, &p.w2, &p.b1, &p.b2}) {
      for (double& v : t->raw_mut()) v = rng.uniform(-1, 1);
    }
    const Tensor x = random_real({4, 4, 4}, rng);
    const spectral::Spectrum s = spectral::rfft2(x);
    const auto red = spectral::truncate_modes(s, keep);
    const Shape rs = red.data.shape();
    const Tensor mixed = reshape(block_mlp(reshape(red.data, {rs[0], rs[1], 2, 2}), p), rs);
    const Tensor shrunk = soft_shrink(mixed, 0.01);
    const Tensor y = add(spectral::irfft2(spectral::pad_modes({red.modes, shrunk}, 4, 4)), x);
    CHECK(max_abs_diff(afno_mix(x, p), y) < 1e-12);
  }
}

TEST_CASE("circular depthwise conv1d matches loops and gradients") {
  Rng rng(16);
  const Tensor x = random_real({2, 3, 4, 5}, rng);
  Tensor wt = random_real({3, 5}, rng), b = random_real({5}, rng);
  const Tensor y = circular_conv1d_depthwise(x, wt, b);
  const std::size_t n = 12;
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t c = 0; c < 5; ++c) {
        double acc = b.real_at(c);
        for (std::size_t k = 0; k < 3; ++k) acc += wt.real_at(k * 5 + c) * x.real_at((o * n + (t + n + k - 1) % n) * 5 + c);
        CHECK(std::abs(acc - y.real_at((o * n + t) * 5 + c)) < 1e-14);
      }
  Tensor xx = x.detach();
  const Tensor r = random_real({2, 3, 4, 5}, rng);
  const ScalarFn f = [&](const Tensor&) { return sum(mul(circular_conv1d_depthwise(xx, wt, b), r)); };
  CHECK(grad_check(f, xx) < 1e-6);
  CHECK(grad_check(f, wt) < 1e-6);
  CHECK(grad_check(f, b) < 1e-6);
}

TEST_CASE("every mixer preserves shape, including odd widths and batches") {
  Rng rng(17);
  for (auto shape : {Shape{2, 2, 8}, Shape{5, 7, 8}, Shape{3, 4, 6, 8}}) {
    const std::size_t h = shape[shape.size() - 3], w = shape[shape.size() - 2];
    const Tensor x = random_real(shape, rng);
    CHECK(self_attention(x, make_attention(8, 2, rng)).shape() == shape);
    CHECK(gfn_mix(x, make_gfn(h, w, 8, rng)).shape() == shape);
    CHECK(fno_mix(x, make_fno(h, w, 8, rng)).shape() == shape);
    CHECK(afno_mix(x, make_afno(8, 4, 0.01, 1.0, BiasMode::identity_residual, rng)).shape() == shape);
    CHECK(afno_mix(x, make_afno(8, 2, 0.01, 0.5, BiasMode::conv1d_residual, rng)).shape() == shape);
  }
}

TEST_CASE("afno runs at any resolution with the same parameters") {
  Rng rng(18);
  const AfnoParams p = make_afno(8, 4, 0.01, 1.0, BiasMode::identity_residual, rng);
  for (auto [h, w] : std::vector<std::pair<std::size_t, std::size_t>>{{4, 4}, {8, 8}, {7, 5}, {16, 12}}) {
    const Tensor x = random_real({h, w, 8}, rng);
    CHECK(afno_mix(x, p).shape() == x.shape());
  }
}

TEST_CASE("linear afno commutes with band-limited upsampling") {
  Rng rng(19);
  AfnoParams p = make_afno(4, 2, 0.0, 1.0, BiasMode::identity_residual, rng);
  p.activation = Activation::identity;
  for (Tensor* t : {&p.w1, &p.w2}) {
    for (double& v : t->raw_mut()) v = rng.uniform(-1, 1);
  }
  for (Tensor* t : {&p.b1, &p.b2}) {
    for (double& v : t->raw_mut()) v = 0.0;
  }
  const Tensor x = spectral::fourier_resample(random_real({7, 7, 4}, rng), 8, 8);
  const Tensor up_then_mix = afno_mix(spectral::fourier_resample(x, 16, 16), p);
  const Tensor mix_then_up = spectral::fourier_resample(afno_mix(x, p), 16, 16);
  CHECK(max_abs_diff(up_then_mix, mix_then_up) < 1e-10);
}

TEST_CASE("spectral mixers are translation equivariant in the linear regime") {
  Rng rng(20);
  const std::size_t h = 6, w = 5, d = 4;
  AfnoParams a = make_afno(d, 2, 0.0, 1.0, BiasMode::identity_residual, rng);
  a.activation = Activation::identity;
  // a per-mode bias is a fixed spectrum, so it has to vanish too
  for (Tensor* t : {&a.b1, &a.b2}) {
    for (double& v : t->raw_mut()) v = 0.0;
  }
  const std::vector<MixerParams> mixers{MixerParams{make_gfn(h, w, d, rng)}, MixerParams{make_fno(h, w, d, rng)},
                                        MixerParams{a}};
  const Tensor x = random_real({h, w, d}, rng);
  for (const auto& m : mixers) {
    CHECK(max_abs_diff(mix(roll(x, 2, 3), m), roll(mix(x, m), 2, 3)) < 1e-10);
  }
}

TEST_CASE("parameter counts") {
  Rng rng(21);
  CHECK(parameter_count(make_attention(8, 1, rng)) == 192);
  CHECK(parameter_count(make_gfn(4, 6, 8, rng)) == 4 * 4 * 8 * 2);
  CHECK(parameter_count(make_fno(4, 6, 8, rng)) == 4 * 4 * 64 * 2);
  CHECK(parameter_count(make_afno(8, 4, 0.01, 1.0, BiasMode::identity_residual, rng)) == 96);
  CHECK(parameter_count(make_afno(8, 4, 0.01, 1.0, BiasMode::conv1d_residual, rng)) == 96 + 32);
  CHECK_THROWS_AS(make_afno(8, 3, 0.01, 1.0, BiasMode::identity_residual, rng), std::invalid_argument);
  CHECK_THROWS_AS(make_afno(8, 4, -1.0, 1.0, BiasMode::identity_residual, rng), std::invalid_argument);
  CHECK_THROWS_AS(make_afno(8, 4, 0.01, 0.0, BiasMode::identity_residual, rng), std::invalid_argument);
}

TEST_CASE("mixer gradient suite on 4x4x8 inputs") {
  for (const auto& e : analysis::gradient_suite(1, {}, false)) {
    CAPTURE(e.target);
    CAPTURE(e.param);
    CHECK(e.report.max_rel_error < analysis::kMixerGradTolerance);
  }
}
