#include "afno/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <ostream>

#include "afno/ops.hpp"
#include "afno/rng.hpp"
#include "afno/spectral.hpp"

namespace afno {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape() || a.is_complex() || b.is_complex()) {
    throw DimensionError(std::string(op) + ": shapes differ or are complex: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Mask reshaped so that it broadcasts against `like` (trailing channel axis).
Tensor broadcastable_mask(const Tensor& mask, const Tensor& like) {
  if (mask.rank() == like.rank()) return mask;
  Shape s = mask.shape();
  s.push_back(1);
  return mask.reshaped_copy(s);
}

void ifft2_inplace(std::vector<cdouble>& a, std::size_t h, std::size_t w) {
  for (std::size_t i = 0; i < h; ++i) spectral::fft(std::span<cdouble>(a.data() + i * w, w), true);
  std::vector<cdouble> col(h);
  for (std::size_t j = 0; j < w; ++j) {
    for (std::size_t i = 0; i < h; ++i) col[i] = a[i * w + j];
    spectral::fft(col, true);
    for (std::size_t i = 0; i < h; ++i) a[i * w + j] = col[i];
  }
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

// -- masking ----------------------------------------------------------------

std::size_t MaskSpec::masked_count() const {
  std::size_t n = 0;
  for (double v : mask.raw()) n += v != 0.0;
  return n;
}

double MaskSpec::masked_fraction() const {
  return static_cast<double>(masked_count()) / static_cast<double>(height * width);
}

MaskSpec random_walk_mask(std::size_t height, std::size_t width, std::size_t steps, std::uint64_t seed) {
  if (height == 0 || width == 0) throw std::invalid_argument("random_walk_mask: grid must be non-empty");
  MaskSpec spec{height, width, steps, seed, Tensor({height, width})};
  auto m = spec.mask.raw_mut();
  Rng rng = Rng::stream(seed, "random_walk_mask");
  std::size_t pos = rng.below(height * width);
  std::size_t r = pos / width, c = pos % width;
  m[pos] = 1.0;
  if (height * width == 1) return spec;
  static constexpr int dr[4] = {-1, 1, 0, 0};
  static constexpr int dc[4] = {0, 0, -1, 1};
  for (std::size_t s = 0; s < steps; ++s) {
    for (;;) {
      const auto dir = rng.below(4);
      const long nr = static_cast<long>(r) + dr[dir];
      const long nc = static_cast<long>(c) + dc[dir];
      if (nr < 0 || nc < 0 || nr >= static_cast<long>(height) || nc >= static_cast<long>(width)) continue;
      r = static_cast<std::size_t>(nr);
      c = static_cast<std::size_t>(nc);
      break;
    }
    m[r * width + c] = 1.0;
  }
  return spec;
}

std::size_t default_mask_steps(std::size_t height, std::size_t width) {
  return static_cast<std::size_t>(std::llround(0.0625 * static_cast<double>(height * width)));
}

Tensor apply_masks(const Tensor& images, const Tensor& masks) {
  if (images.rank() != 4 || masks.rank() != 3 || masks.dim(0) != images.dim(0) || masks.dim(1) != images.dim(1) ||
      masks.dim(2) != images.dim(2)) {
    throw DimensionError("apply_masks: images " + shape_str(images.shape()) + " vs masks " + shape_str(masks.shape()));
  }
  const std::size_t c = images.dim(3);
  const auto src = images.raw();
  const auto m = masks.raw();
  std::vector<double> out(src.begin(), src.end());
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] != 0.0) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(i * c), c, 0.0);
  }
  return Tensor(images.shape(), std::move(out));
}

// -- losses and metrics -----------------------------------------------------

Tensor inpaint_loss(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  require_same_shape(pred, target, "inpaint_loss");
  const Tensor m = broadcastable_mask(mask, pred);
  const Shape out = broadcast_shape(pred.shape(), m.shape());
  if (out != pred.shape()) {
    throw DimensionError("inpaint_loss: mask " + shape_str(mask.shape()) + " does not fit " + shape_str(pred.shape()));
  }
  double count = 0.0;
  const auto mr = m.raw();
  for (std::size_t idx : broadcast_index(out, m.shape())) count += mr[idx];
  if (count == 0.0) return Tensor::scalar(0.0);
  const Tensor diff = sub(pred, target);
  return scale(sum(mul(mul(diff, diff), m)), 1.0 / count);
}

double psnr_from_mse(double mse, double peak) {
  if (!(peak > 0.0)) throw std::invalid_argument("psnr: peak must be positive");
  if (mse < 1e-10) return 100.0;
  return 10.0 * std::log10(peak * peak / mse);
}

double psnr(const Tensor& pred, const Tensor& target, double peak) {
  require_same_shape(pred, target, "psnr");
  const auto a = pred.raw();
  const auto b = target.raw();
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return psnr_from_mse(acc / static_cast<double>(a.size()), peak);
}

double ssim(const Tensor& pred, const Tensor& target, double peak) {
  require_same_shape(pred, target, "ssim");
  if (pred.rank() != 2 && pred.rank() != 3) throw DimensionError("ssim expects [H, W] or [H, W, c]");
  const std::size_t H = pred.dim(0), W = pred.dim(1), C = pred.rank() == 3 ? pred.dim(2) : 1;
  const std::size_t wh = std::min<std::size_t>(8, H), ww = std::min<std::size_t>(8, W);
  const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
  const double n = static_cast<double>(wh * ww);
  const auto a = pred.raw();
  const auto b = target.raw();

  // Summed-area tables of x, y, x^2, y^2, xy with a zero border.
  const std::size_t sw = W + 1;
  std::vector<double> sx((H + 1) * sw), sy(sx.size()), sxx(sx.size()), syy(sx.size()), sxy(sx.size());
  double total = 0.0;
  for (std::size_t ch = 0; ch < C; ++ch) {
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        const double x = a[(i * W + j) * C + ch], y = b[(i * W + j) * C + ch];
        const std::size_t at = (i + 1) * sw + j + 1, up = i * sw + j + 1, left = (i + 1) * sw + j, diag = i * sw + j;
        sx[at] = x + sx[up] + sx[left] - sx[diag];
        sy[at] = y + sy[up] + sy[left] - sy[diag];
        sxx[at] = x * x + sxx[up] + sxx[left] - sxx[diag];
        syy[at] = y * y + syy[up] + syy[left] - syy[diag];
        sxy[at] = x * y + sxy[up] + sxy[left] - sxy[diag];
      }
    }
    const auto box = [&](const std::vector<double>& s, std::size_t i, std::size_t j) {
      return s[(i + wh) * sw + j + ww] - s[i * sw + j + ww] - s[(i + wh) * sw + j] + s[i * sw + j];
    };
    double acc = 0.0;
    for (std::size_t i = 0; i + wh <= H; ++i) {
      for (std::size_t j = 0; j + ww <= W; ++j) {
        const double mx = box(sx, i, j) / n, my = box(sy, i, j) / n;
        const double vx = box(sxx, i, j) / n - mx * mx;
        const double vy = box(syy, i, j) / n - my * my;
        const double cxy = box(sxy, i, j) / n - mx * my;
        acc += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
    }
    total += acc / static_cast<double>((H - wh + 1) * (W - ww + 1));
  }
  return total / static_cast<double>(C);
}

// -- data -------------------------------------------------------------------

Tensor Dataset::batch(const std::vector<std::size_t>& indices) const {
  const Shape& s = images.shape();
  const std::size_t per = s[1] * s[2] * s[3];
  const auto src = images.raw();
  std::vector<double> out;
  out.reserve(indices.size() * per);
  for (std::size_t i : indices) {
    if (i >= size()) throw std::out_of_range("dataset index " + std::to_string(i));
    out.insert(out.end(), src.begin() + static_cast<std::ptrdiff_t>(i * per),
               src.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
  }
  return Tensor({indices.size(), s[1], s[2], s[3]}, std::move(out));
}

Dataset make_synthetic_dataset(std::size_t n, std::size_t height, std::size_t width, std::size_t channels,
                               std::uint64_t seed, bool labeled) {
  if (n == 0 || height == 0 || width == 0 || channels == 0) {
    throw std::invalid_argument("make_synthetic_dataset: sizes must be positive");
  }
  Dataset ds;
  if (labeled) {
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<int>(i % kOrientationClasses);
    Rng rng = Rng::stream(seed, "dataset/labels");
    for (std::size_t i = n; i > 1; --i) std::swap(ds.labels[i - 1], ds.labels[rng.below(i)]);
  }
  const std::size_t hw = height * width;
  std::vector<double> pixels(n * hw * channels);
  std::vector<cdouble> spec(hw);
  constexpr double kappa = 2.0;
  for (std::size_t s = 0; s < n; ++s) {
    Rng rng = Rng::stream(seed, "dataset/image/" + std::to_string(s));
    const double theta_c = labeled ? ds.labels[s] * std::numbers::pi / 4.0 : 0.0;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      for (std::size_t i = 0; i < height; ++i) {
        for (std::size_t j = 0; j < width; ++j) {
          const double fu = static_cast<double>(spectral::signed_frequency(i, height));
          const double fv = static_cast<double>(spectral::signed_frequency(j, width));
          const double r = std::hypot(fu, fv);
          double amp = r == 0.0 ? 0.0 : std::pow(r, -1.5);
          if (labeled && r != 0.0) amp *= std::exp(kappa * std::cos(2.0 * (std::atan2(fu, fv) - theta_c)));
          const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
          spec[i * width + j] = std::polar(amp, phase);
        }
      }
      ifft2_inplace(spec, height, width);
      double lo = spec[0].real(), hi = spec[0].real();
      for (const auto& v : spec) {
        lo = std::min(lo, v.real());
        hi = std::max(hi, v.real());
      }
      const double span = hi > lo ? hi - lo : 1.0;
      for (std::size_t p = 0; p < hw; ++p) {
        pixels[(s * hw + p) * channels + ch] = std::clamp((spec[p].real() - lo) / span, 0.0, 1.0);
      }
    }
  }
  ds.images = Tensor({n, height, width, channels}, std::move(pixels));
  return ds;
}

// -- optimization -----------------------------------------------------------

TaskKind parse_task_kind(std::string_view name) {
  if (name == "inpaint") return TaskKind::inpaint;
  if (name == "classify") return TaskKind::classify;
  throw std::invalid_argument("unknown task '" + std::string(name) + "' (expected inpaint|classify)");
}

const char* task_kind_name(TaskKind kind) { return kind == TaskKind::inpaint ? "inpaint" : "classify"; }

std::size_t TrainConfig::steps_per_epoch() const { return (train_size + batch_size - 1) / batch_size; }

std::size_t TrainConfig::total_steps() const { return max_steps > 0 ? max_steps : epochs * steps_per_epoch(); }

std::size_t TrainConfig::mask_steps(std::size_t height, std::size_t width) const {
  return static_cast<std::size_t>(std::llround(mask_density * static_cast<double>(height * width)));
}

void TrainConfig::validate() const {
  const auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
  if (!(min_lr > 0.0) || !(lr >= min_lr)) fail("need lr >= min_lr > 0");
  if (!(grad_clip > 0.0)) fail("grad_clip must be positive");
  if (batch_size == 0 || train_size == 0 || eval_size == 0) fail("batch_size, train_size and eval_size must be positive");
  if (total_steps() == 0) fail("no training steps (epochs and max_steps are both zero)");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!(mask_density >= 0.0)) fail("mask_density must be >= 0");
}

void TrainConfig::to_kv(config::KeyValues& kv) const {
  using config::format_double;
  kv.set("seed", std::to_string(seed));
  kv.set("train.epochs", std::to_string(epochs));
  kv.set("train.max_steps", std::to_string(max_steps));
  kv.set("train.batch_size", std::to_string(batch_size));
  kv.set("train.lr", format_double(lr));
  kv.set("train.min_lr", format_double(min_lr));
  kv.set("train.warmup_steps", std::to_string(warmup_steps));
  kv.set("train.weight_decay", format_double(weight_decay));
  kv.set("train.grad_clip", format_double(grad_clip));
  kv.set("train.train_size", std::to_string(train_size));
  kv.set("train.eval_size", std::to_string(eval_size));
  kv.set("train.log_every", std::to_string(log_every));
  kv.set("train.mask_density", format_double(mask_density));
}

void TrainConfig::apply(const config::KeyValues& kv) {
  const auto size = [&](const char* key, std::size_t& field) {
    field = static_cast<std::size_t>(kv.get_u64(key, field));
  };
  seed = kv.get_u64("seed", seed);
  size("train.epochs", epochs);
  size("train.max_steps", max_steps);
  size("train.batch_size", batch_size);
  size("train.warmup_steps", warmup_steps);
  size("train.train_size", train_size);
  size("train.eval_size", eval_size);
  size("train.log_every", log_every);
  lr = kv.get_double("train.lr", lr);
  min_lr = kv.get_double("train.min_lr", min_lr);
  weight_decay = kv.get_double("train.weight_decay", weight_decay);
  grad_clip = kv.get_double("train.grad_clip", grad_clip);
  mask_density = kv.get_double("train.mask_density", mask_density);
}

double learning_rate(std::size_t step, const TrainConfig& tc, std::size_t total_steps) {
  if (step < tc.warmup_steps) {
    return tc.lr * static_cast<double>(step + 1) / static_cast<double>(tc.warmup_steps);
  }
  const double t = static_cast<double>(step - tc.warmup_steps);
  const double span = total_steps > tc.warmup_steps ? static_cast<double>(total_steps - tc.warmup_steps) : 1.0;
  const double c = 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(t / span, 1.0)));
  // written so that c = 1 gives lr and c = 0 gives min_lr exactly
  return tc.lr * c + tc.min_lr * (1.0 - c);
}

double clip_scale(double grad_norm, double max_norm) { return grad_norm > max_norm ? max_norm / grad_norm : 1.0; }

double global_grad_norm(const std::vector<NamedParam>& params) {
  double acc = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) acc += g * g;
  }
  return std::sqrt(acc);
}

Adam::Adam(std::vector<NamedParam> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.raw().size(), 0.0);
    v_.emplace_back(p.tensor.raw().size(), 0.0);
  }
}

double Adam::step(double lr, double weight_decay, double grad_clip) {
  const double norm = global_grad_norm(params_);
  const double s = clip_scale(norm, grad_clip);
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k].tensor;
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.raw_mut();
    auto& m = m_[k];
    auto& v = v_[k];
    const double decay = p.rank() >= 2 ? lr * weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * s;
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      w[i] -= decay * w[i];
      w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
  return norm;
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

TrainingDiverged::TrainingDiverged(std::size_t step_, double lr_, double grad_norm_)
    : std::runtime_error("non-finite loss at step " + std::to_string(step_) + " (lr " + fmt("%.6e", lr_) +
                         ", grad norm " + fmt("%.6e", grad_norm_) + ")"),
      step(step_),
      lr(lr_),
      grad_norm(grad_norm_) {}

Tensor make_eval_masks(std::size_t n, std::size_t height, std::size_t width, std::size_t steps, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "eval_masks");
  std::vector<double> out;
  out.reserve(n * height * width);
  for (std::size_t i = 0; i < n; ++i) {
    const MaskSpec m = random_walk_mask(height, width, steps, rng.engine()());
    out.insert(out.end(), m.mask.raw().begin(), m.mask.raw().end());
  }
  return Tensor({n, height, width}, std::move(out));
}

double masked_psnr(const Tensor& pred, const Tensor& target, const Tensor& masks) {
  require_same_shape(pred, target, "masked_psnr");
  const std::size_t c = pred.dim(-1);
  const auto a = pred.raw();
  const auto b = target.raw();
  const auto m = masks.raw();
  if (m.size() * c != a.size()) throw DimensionError("masked_psnr: masks do not match images");
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] == 0.0) continue;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double e = a[i * c + ch] - b[i * c + ch];
      acc += e * e;
      ++count;
    }
  }
  if (count == 0) return 100.0;
  return psnr_from_mse(acc / static_cast<double>(count));
}

double zero_fill_psnr(const Tensor& target, const Tensor& masks) {
  return masked_psnr(Tensor(target.shape()), target, masks);
}

double zero_fill_psnr_analytic(const Dataset& data) {
  double acc = 0.0;
  for (double v : data.images.raw()) acc += v * v;
  return psnr_from_mse(acc / static_cast<double>(data.images.numel()));
}

double evaluate_inpainting(const Model& model, const Dataset& eval, const Tensor& masks) {
  autograd::NoGradGuard guard;
  const Tensor inputs = apply_masks(eval.images, masks);
  const Tensor pred = model_forward(inputs, model);
  return masked_psnr(pred, eval.images, masks);
}

double evaluate_accuracy(const Model& model, const Dataset& eval) {
  autograd::NoGradGuard guard;
  const Tensor logits = model_forward(eval.images, model);
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  const auto l = logits.raw();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = l.begin() + static_cast<std::ptrdiff_t>(i * c);
    const auto best = static_cast<int>(std::max_element(row, row + static_cast<std::ptrdiff_t>(c)) - row);
    correct += best == eval.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

std::string history_csv_header() { return "step,epoch,lr,loss,psnr_or_acc,grad_norm"; }

std::string history_csv_row(const HistoryRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.4f,%.6e,%.8f,%.6f,%.6f", r.step, r.epoch, r.lr, r.loss, r.psnr_or_acc,
                r.grad_norm);
  return buf;
}

TrainResult train(Model& model, TaskKind task, const Dataset& train_set, const Dataset& eval_set,
                  const TrainConfig& tc, std::ostream* csv) {
  tc.validate();
  if (task == TaskKind::inpaint && model.config.head != HeadKind::reconstruction) {
    throw std::invalid_argument("inpainting needs a reconstruction head");
  }
  if (task == TaskKind::classify && (model.config.head != HeadKind::classification || train_set.labels.empty() ||
                                     eval_set.labels.empty())) {
    throw std::invalid_argument("classification needs a classification head and labeled data");
  }
  const std::size_t total = tc.total_steps();
  const std::size_t per_epoch = tc.steps_per_epoch();
  const std::size_t log_every = tc.log_every > 0 ? tc.log_every : per_epoch;
  const std::size_t H = train_set.images.dim(1), W = train_set.images.dim(2);
  const std::size_t walk = tc.mask_steps(H, W);

  Rng batch_rng = Rng::stream(tc.seed, "batches");
  Rng mask_rng = Rng::stream(tc.seed, "train_masks");
  Tensor eval_masks;
  if (task == TaskKind::inpaint) eval_masks = make_eval_masks(eval_set.size(), H, W, walk, tc.seed);

  Adam opt(named_parameters(model));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  if (csv) *csv << history_csv_header() << "\n";
  TrainResult result;
  double loss_acc = 0.0;
  std::size_t loss_n = 0;
  double grad_norm = 0.0;
  for (std::size_t step = 0; step < total; ++step) {
    std::vector<std::size_t> idx;
    while (idx.size() < tc.batch_size) {
      if (cursor == order.size()) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[batch_rng.below(i)]);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    const Tensor batch = train_set.batch(idx);
    const double lr = learning_rate(step, tc, total);
    Tensor loss;
    if (task == TaskKind::inpaint) {
      std::vector<double> mraw;
      mraw.reserve(idx.size() * H * W);
      for (std::size_t b = 0; b < idx.size(); ++b) {
        const MaskSpec m = random_walk_mask(H, W, walk, mask_rng.engine()());
        mraw.insert(mraw.end(), m.mask.raw().begin(), m.mask.raw().end());
      }
      const Tensor masks({idx.size(), H, W}, std::move(mraw));
      loss = inpaint_loss(model_forward(apply_masks(batch, masks), model), batch, masks);
    } else {
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(train_set.labels[i]);
      loss = cross_entropy(model_forward(batch, model), labels);
    }
    const double lv = loss.item();
    if (!std::isfinite(lv)) throw TrainingDiverged(step, lr, grad_norm);
    opt.zero_grad();
    if (loss.requires_grad()) backward(loss);
    grad_norm = opt.step(lr, tc.weight_decay, tc.grad_clip);
    if (!std::isfinite(grad_norm)) throw TrainingDiverged(step, lr, grad_norm);
    loss_acc += lv;
    ++loss_n;

    if ((step + 1) % log_every == 0 || step + 1 == total) {
      HistoryRow row;
      row.step = step + 1;
      row.epoch = static_cast<double>(step + 1) / static_cast<double>(per_epoch);
      row.lr = lr;
      row.loss = loss_acc / static_cast<double>(loss_n);
      row.psnr_or_acc = task == TaskKind::inpaint ? evaluate_inpainting(model, eval_set, eval_masks)
                                                  : evaluate_accuracy(model, eval_set);
      row.grad_norm = grad_norm;
      if (csv) *csv << history_csv_row(row) << "\n";
      result.history.push_back(row);
      result.final_metric = row.psnr_or_acc;
      loss_acc = 0.0;
      loss_n = 0;
    }
  }
  result.steps = total;
  return result;
}

}  // namespace afno
