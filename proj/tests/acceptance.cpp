// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: afno_acceptance [output_dir]   (default: acceptance_out)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "afno/analysis.hpp"
#include "afno/io.hpp"
#include "afno/ops.hpp"
#include "afno/run.hpp"
#include "afno/spectral.hpp"
#include "helpers.hpp"

using namespace afno;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using testutil::random_complex;
using testutil::random_real;

namespace {

int g_failed = 0;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::printf("criterion %2d %-28s %s  %s\n", id, name.c_str(), ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failed;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void guarded(int id, const std::string& name, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, name, false, std::string("threw: ") + e.what());
  }
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// -- 1 ------------------------------------------------------------------------

void spectral_oracle() {
  const auto t0 = Clock::now();
  double fwd = 0.0, inv = 0.0, trip = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng = Rng::stream(seed, "acceptance/spectral");
    const std::size_t h = 1 + rng.below(16), w = 1 + rng.below(16), d = 1 + rng.below(4);
    const Tensor x = random_real({h, w, d}, rng);
    const spectral::Spectrum s = spectral::rfft2(x);
    const auto full = testutil::dft2_loop(testutil::to_complex(x), h, w, d, false);
    fwd = std::max(fwd, testutil::max_diff(s.data.complex_values(), testutil::half_of(full, h, w, d)));
    trip = std::max(trip, testutil::max_abs_diff(spectral::irfft2(s), x));
    // inverse on a random Hermitian-consistent spectrum
    std::vector<cdouble> herm(h * w * d);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        for (std::size_t c = 0; c < d; ++c) {
          const std::size_t a = (i * w + j) * d + c, b = (((h - i) % h) * w + (w - j) % w) * d + c;
          if (b < a) herm[a] = std::conj(herm[b]);
          else if (a == b) herm[a] = rng.uniform(-1, 1);
          else herm[a] = cdouble(rng.uniform(-1, 1), rng.uniform(-1, 1));
        }
    const auto ref = testutil::dft2_loop(herm, h, w, d, true);
    const Tensor y = spectral::irfft2(Tensor({h, spectral::half_width(w), d}, testutil::half_of(herm, h, w, d)), w);
    for (std::size_t i = 0; i < ref.size(); ++i) inv = std::max(inv, std::abs(y.real_at(i) - ref[i].real()));
  }
  const double secs = seconds_since(t0);
  report(1, "spectral oracle", fwd < 1e-10 && inv < 1e-10 && trip < 1e-12 && secs < 10.0,
         fmt("rfft2 %.2e, irfft2 %.2e (< 1e-10), round trip %.2e (< 1e-12), %.2f s", fwd, inv, trip, secs));
}

// -- 2 ------------------------------------------------------------------------

void convolution_theorem() {
  const std::size_t h = 8, w = 8, d = 4;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng = Rng::stream(seed, "acceptance/convolution");
    // a real spatial kernel and its half-spectrum gate
    const Tensor kernel = random_real({h, w, d}, rng);
    const GfnParams gate{spectral::rfft2(kernel).data};
    const Tensor x = random_real({h, w, d}, rng);
    const Tensor y = gfn_mix(x, gate);
    for (std::size_t a = 0; a < h; ++a)
      for (std::size_t b = 0; b < w; ++b)
        for (std::size_t c = 0; c < d; ++c) {
          double acc = 0.0;
          for (std::size_t s = 0; s < h; ++s)
            for (std::size_t t = 0; t < w; ++t)
              acc += kernel.real_at((s * w + t) * d + c) * x.real_at((((a + h - s) % h) * w + (b + w - t) % w) * d + c);
          worst = std::max(worst, std::abs(acc - y.real_at((a * w + b) * d + c)));
        }
  }
  report(2, "convolution theorem", worst < 1e-9, fmt("50 seeds on 8x8x4, max error %.2e (< 1e-9)", worst));
}

// -- 3 ------------------------------------------------------------------------

void mixer_equivalences() {
  Rng rng = Rng::stream(3, "acceptance/equivalence");
  // FNO with diagonal channel matrices is GFN
  bool fno_exact = true;
  for (auto [h, w] : std::vector<std::pair<std::size_t, std::size_t>>{{4, 4}, {8, 8}, {5, 7}}) {
    const std::size_t d = 4, modes = h * (w / 2 + 1);
    const GfnParams g{random_complex({h, w / 2 + 1, d}, rng)};
    FnoParams f{Tensor({h, w / 2 + 1, d, d}, DType::complex128)};
    auto raw = f.weight.raw_mut();
    for (std::size_t m = 0; m < modes; ++m)
      for (std::size_t c = 0; c < d; ++c) {
        raw[2 * ((m * d + c) * d + c)] = g.filter.raw()[2 * (m * d + c)];
        raw[2 * ((m * d + c) * d + c) + 1] = g.filter.raw()[2 * (m * d + c) + 1];
      }
    const Tensor x = random_real({h, w, d}, rng);
    fno_exact = fno_exact && testutil::bit_equal(fno_mix(x, f), gfn_mix(x, g));
  }

  // AFNO with block size 1, identity first layer and a positive real spectrum is a channel gate
  const std::size_t h = 6, w = 6, d = 4;
  AfnoParams p = make_afno(d, d, 0.0, 1.0, BiasMode::identity_residual, rng);
  for (Tensor* t : {&p.w1, &p.w2, &p.b1, &p.b2}) {
    for (double& v : t->raw_mut()) v = 0.0;
  }
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
  const double afno_err = testutil::max_abs_diff(sub(afno_mix(x, p), x), gfn_mix(x, g));

  // attention against the kernel-summation oracle
  double sa_err = 0.0;
  for (std::size_t n = 1; n <= 8; ++n) {
    const AttentionParams a = make_attention(8, 1, rng);
    const Tensor xa = random_real({1, n, 8}, rng);
    const auto ref = testutil::attention_oracle(xa, a);
    const Tensor y = self_attention(xa, a);
    for (std::size_t i = 0; i < ref.size(); ++i) sa_err = std::max(sa_err, std::abs(ref[i] - y.real_at(i)));
  }
  report(3, "mixer equivalences", fno_exact && afno_err < 1e-12 && sa_err < 1e-12,
         fmt("fno-diagonal==gfn %s, afno-degenerate %.2e, attention N<=8 %.2e (< 1e-12)",
             fno_exact ? "bit-exact" : "DIFFERS", afno_err, sa_err));
}

// -- 4 ------------------------------------------------------------------------

void gradient_suite() {
  const auto t0 = Clock::now();
  const auto entries = analysis::gradient_suite(2024);
  const double secs = seconds_since(t0);
  std::size_t failed = 0, shrunk = 0;
  double worst_mixer = 0.0, worst_model = 0.0;
  std::string first_failure;
  for (const auto& e : entries) {
    shrunk += e.report.shrunk_steps;
    double& worst = e.tolerance == analysis::kModelGradTolerance ? worst_model : worst_mixer;
    worst = std::max(worst, e.report.max_rel_error);
    if (!e.passed()) {
      if (failed++ == 0) first_failure = e.target + ":" + e.param;
    }
  }
  report(4, "gradient suite", failed == 0 && secs < 120.0,
         fmt("%zu parameter checks, worst mixer %.2e (< 1e-5), worst model %.2e (< 1e-4), %zu stencils shrunk at "
             "switches, %.1f s%s",
             entries.size(), worst_mixer, worst_model, shrunk, secs,
             failed ? (", first failure " + first_failure).c_str() : ""));
}

// -- 5 ------------------------------------------------------------------------

void complexity_formulas(const fs::path& out) {
  using analysis::flops_formula;
  using analysis::params_formula;
  bool rows_ok = true;
  for (double n : {1.0, 2.0, 4.0, 16.0, 64.0})
    for (double d : {1.0, 2.0, 8.0})
      for (double k : {1.0, 2.0, 4.0}) {
        if (std::fmod(d, k) != 0.0) continue;
        const double lg = std::log2(n);
        rows_ok = rows_ok && flops_formula(MixerKind::sa, n, d) == n * n * d + 3 * n * d * d;
        rows_ok = rows_ok && flops_formula(MixerKind::gfn, n, d) == n * d + n * d * lg;
        rows_ok = rows_ok && flops_formula(MixerKind::fno, n, d) == n * d * d + n * d * lg;
        rows_ok = rows_ok && flops_formula(MixerKind::afno, n, d, k) == n * d * d / k + n * d * lg;
        rows_ok = rows_ok && params_formula(MixerKind::sa, n, d) == 3 * d * d;
        rows_ok = rows_ok && params_formula(MixerKind::gfn, n, d) == n * d;
        rows_ok = rows_ok && params_formula(MixerKind::fno, n, d) == n * d * d;
        rows_ok = rows_ok && params_formula(MixerKind::afno, n, d, k) == (1 + 4 / k) * d * d + 4 * d;
      }
  rows_ok = rows_ok && flops_formula(MixerKind::sa, 4, 2) == 80.0 && flops_formula(MixerKind::afno, 4, 2, 1) == 32.0;

  const analysis::VitShape shape;
  std::ofstream csv(out / "report.csv");
  csv << "mixer,method,embed,mixer_per_layer,mlp_per_layer,head,total_gflops\n";
  bool order_ok = true;
  double afno_counted = 0.0, afno_formula = 0.0;
  std::string totals;
  for (auto method : {analysis::FlopsMethod::formula, analysis::FlopsMethod::operation_count}) {
    double t[4];
    int i = 0;
    for (MixerKind kind : {MixerKind::sa, MixerKind::gfn, MixerKind::fno, MixerKind::afno}) {
      const auto b = analysis::estimate_model_flops(kind, shape, method);
      csv << mixer_kind_name(kind) << "," << analysis::flops_method_name(method) << "," << b.embed << ","
          << b.mixer_per_layer << "," << b.mlp_per_layer << "," << b.head << "," << b.total / 1e9 << "\n";
      t[i++] = b.total / 1e9;
    }
    order_ok = order_ok && t[1] < t[3] && t[3] < t[0];
    (method == analysis::FlopsMethod::formula ? afno_formula : afno_counted) = t[3];
    totals += fmt(" %s: gfn %.1f < afno %.1f < sa %.1f;", analysis::flops_method_name(method), t[1], t[3], t[0]);
  }
  const double dev = (afno_counted - 257.2) / 257.2;
  report(5, "complexity formulas", rows_ok && order_ok && std::abs(dev) < 0.15,
         fmt("table rows %s; ViT-B/4 AFNO %.1f GFLOPs counted (%+.1f%% vs 257.2), %.1f by formula;%s",
             rows_ok ? "exact" : "MISMATCH", afno_counted, 100 * dev, afno_formula, totals.c_str()));
}

// -- 6 ------------------------------------------------------------------------

void latency_scaling(const fs::path& out) {
  const auto t0 = Clock::now();
  const std::size_t d = 64, k = 4;
  const std::vector<std::pair<std::size_t, std::size_t>> sizes{{32, 32}, {64, 64}};
  // calibration: a linear-time reference op on this host, and enough repeats for ~0.2 s per size
  const auto linear_time = [&](std::size_t s) {
    Rng rng(1);
    const Tensor a = random_real({s, s, d}, rng), b = random_real({s, s, d}, rng);
    autograd::NoGradGuard g;
    std::vector<double> ts;
    for (int r = 0; r < 15; ++r) {
      const auto t = Clock::now();
      (void)add(a, b);
      ts.push_back(seconds_since(t));
    }
    std::nth_element(ts.begin(), ts.begin() + 7, ts.end());
    return ts[7];
  };
  const double linear_ratio = linear_time(64) / linear_time(32);
  const auto probe = analysis::bench_latency(MixerKind::afno, {sizes[0]}, d, k, 5, 2, 0);
  const std::size_t repeats = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(0.2 / std::max(probe[0].median_seconds, 1e-6))), 7, 41);

  // three interleaved rounds; per-size medians pooled across rounds
  std::vector<analysis::LatencyRow> all;
  std::vector<double> sa32, sa64, af32, af64;
  for (std::uint64_t round = 0; round < 3; ++round) {
    for (MixerKind kind : {MixerKind::sa, MixerKind::afno}) {
      const auto rows = analysis::bench_latency(kind, sizes, d, k, repeats, 2, round);
      all.insert(all.end(), rows.begin(), rows.end());
      (kind == MixerKind::sa ? sa32 : af32).push_back(rows[0].median_seconds);
      (kind == MixerKind::sa ? sa64 : af64).push_back(rows[1].median_seconds);
    }
  }
  const auto med = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double sa_ratio = med(sa64) / med(sa32), afno_ratio = med(af64) / med(af32);
  std::ofstream csv(out / "latency.csv");
  analysis::write_latency_csv(csv, all);
  const double secs = seconds_since(t0);
  report(6, "latency scaling", sa_ratio >= 8.0 && afno_ratio <= 6.0 && secs < 300.0,
         fmt("1024->4096 tokens, d=64: sa x%.2f (>= 8), afno x%.2f (<= 6); host linear-op growth x%.2f, %zu "
             "repeats, 1 thread, %.0f s",
             sa_ratio, afno_ratio, linear_ratio, repeats, secs));
}

// -- 7 to 10 --------------------------------------------------------------------

RunConfig desk_config(const fs::path& out) {
  RunConfig rc;  // 32x32 images, patch 4 (8x8 tokens), depth 2, d=32, AFNO k=4, lambda 0.01
  rc.train.max_steps = 2000;
  rc.train.seed = 0;
  rc.out_dir = (out / "train").string();
  return rc;
}

void training_and_checkpoint_criteria(const fs::path& out) {
  const RunConfig rc = desk_config(out);
  const fs::path run_dir = out / "train";
  fs::create_directories(run_dir);

  Model model;
  std::string history;
  bool trained = false;
  guarded(7, "desk-scale training", [&] {
    const RunData data = make_run_data(rc);
    const double analytic = zero_fill_psnr_analytic(data.eval_set);
    const double measured = zero_fill_psnr(data.eval_set.images, data.eval_masks);
    const auto t0 = Clock::now();
    std::ostringstream csv;
    RunOutcome r = run_training(rc, &csv);
    const double secs = seconds_since(t0);
    history = csv.str();
    std::ofstream(run_dir / "history.csv", std::ios::binary) << history;
    std::ofstream(run_dir / "config.txt") << rc.to_text();
    save_checkpoint(r.model, run_dir);
    model = r.model;
    trained = true;
    const double psnr = r.result.final_metric;

    const auto t1 = Clock::now();
    const auto rows = run_ablation(rc, {1, 4, 16}, {0.0, 0.01, 0.1});
    std::ofstream abl(out / "ablation.csv");
    write_ablation_csv(abl, rows);
    bool rows_ok = rows.size() == 9;
    std::string grid;
    for (const auto& row : rows) {
      rows_ok = rows_ok && std::isfinite(row.final_metric) && row.steps == 2000;
      grid += fmt(" k%zu/%g:%.1f", row.blocks, row.lambda, row.final_metric);
    }
    const double abl_secs = seconds_since(t1);
    report(7, "desk-scale training",
           psnr >= analytic + 3.0 && psnr >= measured + 3.0 && r.result.steps == 2000 && secs < 600.0 && rows_ok,
           fmt("masked PSNR %.2f dB vs zero-fill %.2f analytic / %.2f measured (+%.2f dB, need 3) in %zu steps, "
               "%.0f s; ablation %zu rows in %.0f s:%s",
               psnr, analytic, measured, psnr - std::max(analytic, measured), r.result.steps, secs, rows.size(),
               abl_secs, grid.c_str()));
  });

  guarded(8, "resolution invariance", [&] {
    if (!trained) throw std::runtime_error("no checkpoint from criterion 7");
    const Model loaded = load_checkpoint(run_dir);
    const Model big = adapt_to_resolution(loaded, 64, 64);
    bool same_params = big.config.grid_h() == 16 && loaded.config.grid_h() == 8;
    const auto pa = named_parameters(loaded), pb = named_parameters(big);
    same_params = same_params && pa.size() == pb.size();
    for (std::size_t i = 0; same_params && i < pa.size(); ++i) {
      same_params = testutil::bit_equal(pa[i].tensor, pb[i].tensor);
    }
    const Dataset eval64 = make_synthetic_dataset(16, 64, 64, 1, derive_seed(rc.train.seed, "eval_data"));
    const Tensor masks64 = make_eval_masks(16, 64, 64, rc.train.mask_steps(64, 64), rc.train.seed);
    const double psnr64 = evaluate_inpainting(big, eval64, masks64);
    const double base64 = zero_fill_psnr(eval64.images, masks64);

    RunConfig grc = rc;
    grc.model.mixer = MixerKind::gfn;
    grc.train.max_steps = 200;
    const RunOutcome g = run_training(grc);
    save_checkpoint(g.model, out / "train_gfn");
    const Model gfn = load_checkpoint(out / "train_gfn");
    bool gfn_threw = false;
    try {
      autograd::NoGradGuard ng;
      model_forward(eval64.images, gfn);
    } catch (const std::exception&) {
      gfn_threw = true;
    }
    const double gfn64 = evaluate_inpainting(adapt_to_resolution(gfn, 64, 64), eval64, masks64);
    report(8, "resolution invariance",
           same_params && std::isfinite(psnr64) && gfn_threw && std::isfinite(gfn64),
           fmt("afno 8x8-grid checkpoint at 16x16 grid: parameters %s, masked PSNR %.2f (zero-fill %.2f); gfn %s "
               "before resize, %.2f dB after",
               same_params ? "unchanged" : "CHANGED", psnr64, base64, gfn_threw ? "throws" : "DID NOT THROW", gfn64));
  });

  guarded(9, "shrinkage statistics", [&] {
    if (!trained) throw std::runtime_error("no checkpoint from criterion 7");
    const Dataset probe = make_synthetic_dataset(16, 32, 32, 1, derive_seed(7, "sparsity_data"));
    const auto layers = analysis::sparsity_stats(model, probe.images);
    std::ofstream csv(out / "sparsity.csv");
    analysis::write_sparsity_csv(csv, layers);
    bool ordered = !layers.empty();
    std::string per_layer;
    for (const auto& l : layers) {
      ordered = ordered && l.high_quartile_mean > l.low_quartile_mean;
      per_layer += fmt(" layer %zu high %.3f vs low %.3f;", l.layer, l.high_quartile_mean, l.low_quartile_mean);
    }
    Model zero = model;
    for (auto& blk : zero.blocks) {
      if (auto* p = std::get_if<AfnoParams>(&blk.mixer)) p->lambda = 0.0;
    }
    bool exact_zero = true;
    for (const auto& l : analysis::sparsity_stats(zero, probe.images)) {
      for (double z : l.zero_fraction) exact_zero = exact_zero && z == 0.0;
    }
    report(9, "shrinkage statistics", ordered && exact_zero,
           fmt("lambda 0.01 checkpoint:%s lambda 0 gives %s", per_layer.c_str(),
               exact_zero ? "exactly 0" : "NONZERO"));
  });

  guarded(10, "determinism", [&] {
    if (!trained) throw std::runtime_error("no history from criterion 7");
    std::ostringstream csv;
    run_training(rc, &csv);
    std::ofstream(run_dir / "history_rerun.csv", std::ios::binary) << csv.str();
    const bool same = slurp(run_dir / "history.csv") == slurp(run_dir / "history_rerun.csv") && !history.empty();
    report(10, "determinism", same,
           fmt("rerun history.csv %s (%zu bytes)", same ? "byte-identical" : "DIFFERS", history.size()));
  });
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path out = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_out");
  fs::create_directories(out);
  const auto t0 = Clock::now();
  guarded(1, "spectral oracle", spectral_oracle);
  guarded(2, "convolution theorem", convolution_theorem);
  guarded(3, "mixer equivalences", mixer_equivalences);
  guarded(4, "gradient suite", gradient_suite);
  guarded(5, "complexity formulas", [&] { complexity_formulas(out); });
  guarded(6, "latency scaling", [&] { latency_scaling(out); });
  training_and_checkpoint_criteria(out);
  std::printf("%d failed, %.0f s total, artifacts in %s\n", g_failed, seconds_since(t0), out.string().c_str());
  return g_failed == 0 ? 0 : 1;
}
