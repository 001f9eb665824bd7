#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "afno/backbone.hpp"
#include "afno/config.hpp"
#include "afno/tensor.hpp"

namespace afno {

// -- masking ----------------------------------------------------------------

struct MaskSpec {
  std::size_t height = 0, width = 0;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
  Tensor mask;  // real [H, W], 1 = masked to zero

  std::size_t masked_count() const;
  double masked_fraction() const;
};

/// Uniform start, then `steps` moves to a uniformly chosen 4-neighbour.
/// Proposals that leave the grid are redrawn; revisits are allowed. Every
/// visited cell is masked.
MaskSpec random_walk_mask(std::size_t height, std::size_t width, std::size_t steps, std::uint64_t seed);

/// Walk length scaled to the grid: round(0.0625 * H * W), i.e. 3136 steps on
/// a 224 x 224 image.
std::size_t default_mask_steps(std::size_t height, std::size_t width);

/// Zeroes masked pixels of [B, H, W, c] images; `masks` is [B, H, W].
Tensor apply_masks(const Tensor& images, const Tensor& masks);

// -- losses and metrics -----------------------------------------------------

/// Mean squared error over masked pixels (all channels). `mask` is [H, W] or
/// [B, H, W] for [B, H, W, c] tensors, or has the tensors' own shape. An
/// empty mask gives a constant 0.
Tensor inpaint_loss(const Tensor& pred, const Tensor& target, const Tensor& mask);

/// 10 log10(peak^2 / MSE), capped at 100 dB when MSE < 1e-10.
double psnr(const Tensor& pred, const Tensor& target, double peak = 1.0);
double psnr_from_mse(double mse, double peak = 1.0);

/// Single-scale SSIM with an 8x8 uniform window (clamped to the image),
/// stride 1, population statistics, averaged over windows and channels.
/// Accepts [H, W] or [H, W, c].
double ssim(const Tensor& pred, const Tensor& target, double peak = 1.0);

// -- data -------------------------------------------------------------------

struct Dataset {
  Tensor images;            // real [n, H, W, c] in [0, 1]
  std::vector<int> labels;  // empty for the unlabeled variant

  std::size_t size() const { return images.defined() ? images.dim(0) : 0; }
  Tensor batch(const std::vector<std::size_t>& indices) const;
};

inline constexpr int kOrientationClasses = 4;

/// Random images whose spectra decay as |f|^-1.5 with uniform random phase,
/// min-max normalized per image. The labeled variant additionally tilts the
/// spectrum towards one of four orientations (0, 45, 90, 135 degrees); the
/// label is that orientation and classes are exactly balanced up to n mod 4.
Dataset make_synthetic_dataset(std::size_t n, std::size_t height, std::size_t width, std::size_t channels,
                               std::uint64_t seed, bool labeled = false);

// -- optimization -----------------------------------------------------------

enum class TaskKind { inpaint, classify };
TaskKind parse_task_kind(std::string_view name);
const char* task_kind_name(TaskKind kind);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t max_steps = 0;  // overrides epochs when nonzero
  std::size_t batch_size = 8;
  double lr = 1e-3;
  double min_lr = 1e-5;
  std::size_t warmup_steps = 50;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  std::size_t train_size = 256;
  std::size_t eval_size = 64;
  std::size_t log_every = 0;  // 0: once per epoch
  double mask_density = 0.0625;

  std::size_t steps_per_epoch() const;
  std::size_t total_steps() const;
  std::size_t mask_steps(std::size_t height, std::size_t width) const;
  void validate() const;

  void to_kv(config::KeyValues& kv) const;
  void apply(const config::KeyValues& kv);

  bool operator==(const TrainConfig&) const = default;
};

/// Linear warmup lr*(s+1)/warmup for s < warmup, then cosine decay from lr at
/// the end of warmup to min_lr at `total_steps`.
double learning_rate(std::size_t step, const TrainConfig& tc, std::size_t total_steps);

/// Scale applied to every gradient so that the global norm is at most
/// `max_norm`.
double clip_scale(double grad_norm, double max_norm);
double global_grad_norm(const std::vector<NamedParam>& params);

/// Adam with decoupled weight decay. Decay applies to parameters of rank >= 2
/// (projection matrices and mixer weights), not to norms and biases.
class Adam {
 public:
  Adam(std::vector<NamedParam> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// Clips, then updates every parameter that has a gradient. Returns the
  /// pre-clip global gradient norm.
  double step(double lr, double weight_decay, double grad_clip);
  void zero_grad();
  std::size_t step_count() const { return t_; }

 private:
  std::vector<NamedParam> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, double lr, double grad_norm);
  std::size_t step;
  double lr;
  double grad_norm;
};

struct HistoryRow {
  std::size_t step = 0;
  double epoch = 0.0;
  double lr = 0.0;
  double loss = 0.0;         // mean training loss since the previous row
  double psnr_or_acc = 0.0;  // held-out masked PSNR (inpaint) or accuracy (classify)
  double grad_norm = 0.0;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  double final_metric = 0.0;
  std::size_t steps = 0;
};

/// Fixed random-walk masks for a held-out set, from the "eval_masks" stream.
Tensor make_eval_masks(std::size_t n, std::size_t height, std::size_t width, std::size_t steps, std::uint64_t seed);

/// PSNR pooled over all masked pixels of the set.
double masked_psnr(const Tensor& pred, const Tensor& target, const Tensor& masks);
/// Zero-fill baseline on the same masks: predictions are the masked input.
double zero_fill_psnr(const Tensor& target, const Tensor& masks);
/// Zero-fill baseline from dataset statistics alone: masks independent of
/// the pixels give an expected masked MSE of E[x^2].
double zero_fill_psnr_analytic(const Dataset& data);

double evaluate_inpainting(const Model& model, const Dataset& eval, const Tensor& masks);
double evaluate_accuracy(const Model& model, const Dataset& eval);

/// Training loop. Writes CSV history (`step,epoch,lr,loss,psnr_or_acc,grad_norm`)
/// to `csv` when given. Throws TrainingDiverged on a non-finite loss.
TrainResult train(Model& model, TaskKind task, const Dataset& train_set, const Dataset& eval_set,
                  const TrainConfig& tc, std::ostream* csv = nullptr);

std::string history_csv_header();
std::string history_csv_row(const HistoryRow& row);

}  // namespace afno
