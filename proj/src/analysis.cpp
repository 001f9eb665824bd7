#include "afno/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "afno/ops.hpp"
#include "afno/rng.hpp"
#include "afno/spectral.hpp"
#include "afno/tasks.hpp"

namespace afno::analysis {

namespace {

void require_positive(double n, double d, double k) {
  if (!(n >= 1.0) || !(d >= 1.0) || !(k >= 1.0)) throw std::invalid_argument("N, d and k must be >= 1");
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

double flops_formula(MixerKind kind, double n, double d, double k) {
  require_positive(n, d, k);
  const double nlogn = n * d * std::log2(n);
  switch (kind) {
    case MixerKind::sa: return n * n * d + 3.0 * n * d * d;
    case MixerKind::gfn: return n * d + nlogn;
    case MixerKind::fno: return n * d * d + nlogn;
    case MixerKind::afno: return n * d * d / k + nlogn;
  }
  throw std::invalid_argument("unknown mixer kind");
}

double params_formula(MixerKind kind, double n, double d, double k) {
  require_positive(n, d, k);
  switch (kind) {
    case MixerKind::sa: return 3.0 * d * d;
    case MixerKind::gfn: return n * d;
    case MixerKind::fno: return n * d * d;
    case MixerKind::afno: return (1.0 + 4.0 / k) * d * d + 4.0 * d;
  }
  throw std::invalid_argument("unknown mixer kind");
}

ComplexityReport complexity_report(MixerKind kind, std::size_t h, std::size_t w, std::size_t d, std::size_t k) {
  ComplexityReport r;
  r.kind = kind;
  r.n = h * w;
  r.d = d;
  r.k = kind == MixerKind::afno ? k : 1;
  const double n = static_cast<double>(r.n), dd = static_cast<double>(d), kk = static_cast<double>(r.k);
  r.formula_flops = flops_formula(kind, n, dd, kk);
  r.formula_params = params_formula(kind, n, dd, kk);
  Rng rng = Rng::stream(0, "complexity_report");
  switch (kind) {
    case MixerKind::sa:
      r.actual_params = parameter_count(make_attention(d, 1, rng));
      r.notes = "q/k/v projections without biases";
      break;
    case MixerKind::gfn:
      r.actual_params = parameter_count(make_gfn(h, w, d, rng));
      r.notes = "complex filter over the h x (w/2+1) half spectrum, 2 reals per entry";
      break;
    case MixerKind::fno:
      r.actual_params = parameter_count(make_fno(h, w, d, rng));
      r.notes = "complex d x d matrix per half-spectrum mode, 2 reals per entry";
      break;
    case MixerKind::afno:
      r.actual_params = parameter_count(make_afno(d, k, 0.0, 1.0, BiasMode::identity_residual, rng));
      r.notes = "block MLP only: 4d^2/k + 4d reals; the formula's extra d^2 has no stored counterpart";
      break;
  }
  r.notes += "; log base 2";
  return r;
}

std::size_t crossover_tokens(double d, double k, std::size_t limit) {
  // largest scanned N at which AFNO is not cheaper
  std::size_t last_bad = 0;
  for (std::size_t n = 1; n <= limit; n = n < 4096 ? n + 1 : n + n / 64) {
    const double nn = static_cast<double>(n);
    if (!(flops_formula(MixerKind::afno, nn, d, k) < flops_formula(MixerKind::sa, nn, d, 1.0))) last_bad = n;
  }
  if (last_bad >= limit) return 0;
  return last_bad + 1;
}

const char* flops_method_name(FlopsMethod m) {
  return m == FlopsMethod::formula ? "formula" : "operation_count";
}

FlopsBreakdown estimate_model_flops(MixerKind kind, const VitShape& s, FlopsMethod method) {
  if (s.patch == 0 || s.image % s.patch != 0) throw std::invalid_argument("patch must divide the image size");
  const std::size_t h = s.image / s.patch, w = h;
  const double n = static_cast<double>(h * w);
  const double d = static_cast<double>(s.hidden);
  const double k = static_cast<double>(s.blocks);
  const double modes = static_cast<double>(h * spectral::half_width(w));
  FlopsBreakdown b;
  b.method = method;
  b.tokens = h * w;
  b.embed = n * static_cast<double>(s.patch * s.patch * s.channels) * d;
  b.mlp_per_layer = 2.0 * s.mlp_ratio * n * d * d;
  b.head = d * static_cast<double>(s.num_classes);
  if (method == FlopsMethod::formula) {
    b.mixer_per_layer = flops_formula(kind, n, d, k);
  } else {
    const double fft = n * d * std::log2(n);
    switch (kind) {
      case MixerKind::sa: b.mixer_per_layer = 3.0 * n * d * d + 2.0 * n * n * d; break;
      case MixerKind::gfn: b.mixer_per_layer = fft + 4.0 * modes * d; break;
      case MixerKind::fno: b.mixer_per_layer = fft + 4.0 * modes * d * d; break;
      case MixerKind::afno: b.mixer_per_layer = fft + 8.0 * modes * d * d / k; break;
    }
  }
  b.total = b.embed + static_cast<double>(s.depth) * (b.mixer_per_layer + b.mlp_per_layer) + b.head;
  return b;
}

std::vector<LatencyRow> bench_latency(MixerKind kind, const std::vector<std::pair<std::size_t, std::size_t>>& sizes,
                                      std::size_t d, std::size_t k, std::size_t repeats, std::size_t warmup,
                                      std::uint64_t seed) {
  if (repeats < 5) throw std::invalid_argument("bench_latency needs at least 5 repeats");
  if (warmup < 2) throw std::invalid_argument("bench_latency needs at least 2 warmup runs");
  autograd::NoGradGuard guard;
  std::vector<LatencyRow> rows;
  for (const auto& [h, w] : sizes) {
    Rng rng = Rng::stream(seed, "bench/" + std::to_string(h) + "x" + std::to_string(w));
    MixerParams params;
    switch (kind) {
      case MixerKind::sa: params = make_attention(d, 1, rng); break;
      case MixerKind::gfn: params = make_gfn(h, w, d, rng); break;
      case MixerKind::fno: params = make_fno(h, w, d, rng); break;
      case MixerKind::afno: params = make_afno(d, k, 0.01, 1.0, BiasMode::identity_residual, rng); break;
    }
    Tensor x({h, w, d});
    for (double& v : x.raw_mut()) v = rng.normal();
    std::vector<double> times;
    for (std::size_t r = 0; r < warmup + repeats; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      const Tensor y = mix(x, params);
      const auto t1 = std::chrono::steady_clock::now();
      if (y.numel() != x.numel()) throw std::logic_error("mixer changed the token count");
      if (r >= warmup) times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    LatencyRow row;
    row.kind = kind;
    row.h = h;
    row.w = w;
    row.n = h * w;
    row.median_seconds = quantile(times, 0.5);
    row.iqr_seconds = quantile(times, 0.75) - quantile(times, 0.25);
    row.repeats = repeats;
    rows.push_back(row);
  }
  return rows;
}

void write_latency_csv(std::ostream& os, const std::vector<LatencyRow>& rows) {
  os << "mixer,h,w,n,median_seconds,iqr_seconds,repeats,threads\n";
  for (const auto& r : rows) {
    os << mixer_kind_name(r.kind) << "," << r.h << "," << r.w << "," << r.n << "," << r.median_seconds << ","
       << r.iqr_seconds << "," << r.repeats << ",1\n";
  }
}

std::vector<SparsityLayer> sparsity_stats(const Model& model, const Tensor& images) {
  if (model.config.mixer != MixerKind::afno) throw std::invalid_argument("sparsity_stats needs an AFNO model");
  ForwardTrace trace;
  {
    autograd::NoGradGuard guard;
    (void)model_forward(images, model, &trace);
  }
  std::vector<SparsityLayer> out;
  for (std::size_t l = 0; l < trace.probes.size(); ++l) {
    const ShrinkProbe& probe = trace.probes[l];
    const auto& modes = probe.modes;
    SparsityLayer s;
    s.layer = l;
    s.lambda = probe.lambda;
    s.height = modes.height;
    s.half_width = spectral::half_width(modes.full_width);
    s.zero_fraction.assign(s.height * s.half_width, 1.0);
    s.radius.resize(s.height * s.half_width);
    for (std::size_t i = 0; i < s.height; ++i) {
      for (std::size_t j = 0; j < s.half_width; ++j) {
        const double fy = static_cast<double>(spectral::signed_frequency(i, s.height)) / static_cast<double>(s.height);
        const double fx = static_cast<double>(j) / static_cast<double>(modes.full_width);
        s.radius[i * s.half_width + j] = std::hypot(fy, fx);
      }
    }
    // pre_shrink is [B, rows, cols, d] complex
    const Tensor& z = probe.pre_shrink;
    const std::size_t rows = modes.rows.size(), cols = modes.cols, d = z.dim(-1);
    const std::size_t batch = z.numel() / (rows * cols * d);
    const auto raw = z.raw();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        std::size_t zeroed = 0;
        for (std::size_t b = 0; b < batch; ++b) {
          const double* p = raw.data() + 2 * (((b * rows + r) * cols + c) * d);
          for (std::size_t e = 0; e < 2 * d; ++e) zeroed += probe.lambda > 0.0 && std::abs(p[e]) <= probe.lambda;
        }
        s.zero_fraction[modes.rows[r] * s.half_width + c] =
            static_cast<double>(zeroed) / static_cast<double>(2 * d * batch);
      }
    }
    s.mean = std::accumulate(s.zero_fraction.begin(), s.zero_fraction.end(), 0.0) /
             static_cast<double>(s.zero_fraction.size());
    std::vector<std::size_t> order(s.zero_fraction.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.radius[a] < s.radius[b]; });
    const std::size_t q = std::max<std::size_t>(1, order.size() / 4);
    double lo = 0.0, hi = 0.0;
    for (std::size_t i = 0; i < q; ++i) {
      lo += s.zero_fraction[order[i]];
      hi += s.zero_fraction[order[order.size() - 1 - i]];
    }
    s.low_quartile_mean = lo / static_cast<double>(q);
    s.high_quartile_mean = hi / static_cast<double>(q);
    out.push_back(std::move(s));
  }
  return out;
}

void write_sparsity_csv(std::ostream& os, const std::vector<SparsityLayer>& layers) {
  os << "layer,row,col,radius,zero_fraction\n";
  for (const auto& s : layers) {
    for (std::size_t i = 0; i < s.height; ++i) {
      for (std::size_t j = 0; j < s.half_width; ++j) {
        os << s.layer << "," << i << "," << j << "," << s.radius[i * s.half_width + j] << ","
           << s.zero_fraction[i * s.half_width + j] << "\n";
      }
    }
  }
}

namespace {

Tensor random_real(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.raw_mut()) v = rng.normal();
  return t;
}

// sum(y * r) for a fixed random r
ScalarFn projected(std::function<Tensor()> forward, const Shape& out_shape, Rng& rng) {
  Tensor r = random_real(out_shape, rng);
  return [forward = std::move(forward), r](const Tensor&) { return sum(mul(forward(), r)); };
}

void check_all(std::vector<GradCheckEntry>& out, const std::string& target, const std::vector<NamedParam>& params,
               const ScalarFn& f, double tol) {
  for (const auto& p : params) {
    out.push_back({target, p.name, grad_check_report(f, p.tensor), tol});
  }
}

struct MixerCase {
  std::string name;
  MixerParams params;
};

std::vector<MixerCase> mixer_cases(MixerKind kind, std::size_t h, std::size_t w, std::size_t d, Rng& rng) {
  std::vector<MixerCase> cases;
  switch (kind) {
    case MixerKind::sa:
      cases.push_back({"sa/heads1", make_attention(d, 1, rng)});
      cases.push_back({"sa/heads2", make_attention(d, 2, rng)});
      break;
    case MixerKind::gfn: cases.push_back({"gfn", make_gfn(h, w, d, rng)}); break;
    case MixerKind::fno: cases.push_back({"fno", make_fno(h, w, d, rng)}); break;
    case MixerKind::afno: {
      cases.push_back({"afno/identity", make_afno(d, 2, 0.01, 1.0, BiasMode::identity_residual, rng)});
      cases.push_back({"afno/conv1d", make_afno(d, 4, 0.01, 1.0, BiasMode::conv1d_residual, rng)});
      cases.push_back({"afno/truncated", make_afno(d, 2, 0.01, 0.5, BiasMode::identity_residual, rng)});
      break;
    }
  }
  return cases;
}

}  // namespace

std::vector<GradCheckEntry> gradient_suite(std::uint64_t seed, const std::vector<MixerKind>& kinds,
                                           bool include_models) {
  const std::vector<MixerKind> all{MixerKind::sa, MixerKind::gfn, MixerKind::fno, MixerKind::afno};
  const auto& use = kinds.empty() ? all : kinds;
  const std::size_t h = 4, w = 4, d = 8;
  std::vector<GradCheckEntry> out;
  Rng rng = Rng::stream(seed, "gradient_suite");
  for (MixerKind kind : use) {
    for (auto& c : mixer_cases(kind, h, w, d, rng)) {
      auto params = named_parameters(c.params);
      for (auto& p : params) p.tensor.set_requires_grad(true);
      Tensor x = random_real({h, w, d}, rng);
      x.set_requires_grad(true);
      const MixerParams& mp = c.params;
      const ScalarFn f = projected([x, &mp] { return mix(x, mp); }, {h, w, d}, rng);
      params.push_back({"input", x});
      check_all(out, c.name, params, f, kMixerGradTolerance);
    }
  }
  if (!include_models) return out;
  for (MixerKind kind : use) {
    ModelConfig cfg;
    cfg.image_h = cfg.image_w = 8;
    cfg.patch = 2;
    cfg.depth = 2;
    cfg.hidden = d;
    cfg.mixer = kind;
    cfg.blocks = 2;
    cfg.mlp_ratio = 2.0;
    const Model model = make_model(cfg, derive_seed(seed, std::string("gradient_suite/model/") + mixer_kind_name(kind)));
    const Tensor images = random_real({2, 8, 8, 1}, rng);
    std::vector<double> mask_values;
    for (std::size_t b = 0; b < 2; ++b) {
      const Tensor m = random_walk_mask(8, 8, 6, rng.engine()()).mask;
      mask_values.insert(mask_values.end(), m.raw().begin(), m.raw().end());
    }
    const Tensor masks({2, 8, 8}, std::move(mask_values));
    const Tensor input = apply_masks(images, masks);
    const ScalarFn f = [&model, input, images, masks](const Tensor&) {
      return inpaint_loss(model_forward(input, model), images, masks);
    };
    check_all(out, std::string("model/") + mixer_kind_name(kind), named_parameters(model), f, kModelGradTolerance);
  }
  return out;
}

}  // namespace afno::analysis
