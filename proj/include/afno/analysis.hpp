#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "afno/backbone.hpp"
#include "afno/gradcheck.hpp"
#include "afno/mixers.hpp"

namespace afno::analysis {

// -- complexity formulas (log base 2) -------------------------------------
//   flops:  sa N^2 d + 3 N d^2 | gfn N d + N d log N | fno N d^2 + N d log N |
//           afno N d^2 / k + N d log N
//   params: sa 3 d^2 | gfn N d | fno N d^2 | afno (1 + 4/k) d^2 + 4 d

double flops_formula(MixerKind kind, double n, double d, double k = 1.0);
double params_formula(MixerKind kind, double n, double d, double k = 1.0);

struct ComplexityReport {
  MixerKind kind = MixerKind::afno;
  std::size_t n = 0, d = 0, k = 1;
  double formula_flops = 0.0;
  double formula_params = 0.0;
  std::size_t actual_params = 0;  // stored reals of one mixer on an h x w grid
  std::string notes;
};

/// Formula values next to the parameter count of a freshly built mixer on an
/// h x w token grid (complex entries count as two reals).
ComplexityReport complexity_report(MixerKind kind, std::size_t h, std::size_t w, std::size_t d, std::size_t k);

/// Smallest token count N >= 1 from which the AFNO formula stays below the
/// attention formula (checked up to `limit`); 0 if it never does.
std::size_t crossover_tokens(double d, double k, std::size_t limit = 1u << 24);

// -- whole-model FLOPs --------------------------------------------------------

/// Multiply-accumulate count of a ViT-style classifier.
struct VitShape {
  std::size_t image = 224;
  std::size_t patch = 4;
  std::size_t channels = 3;
  std::size_t depth = 12;
  std::size_t hidden = 768;
  std::size_t blocks = 1;
  double mlp_ratio = 4.0;
  std::size_t num_classes = 1000;
};

enum class FlopsMethod {
  formula,          // mixer term straight from the complexity formulas
  operation_count,  // mixer term counted from the implemented arithmetic
};

const char* flops_method_name(FlopsMethod m);

struct FlopsBreakdown {
  FlopsMethod method = FlopsMethod::formula;
  std::size_t tokens = 0;
  double embed = 0.0;
  double mixer_per_layer = 0.0;
  double mlp_per_layer = 0.0;
  double head = 0.0;
  double total = 0.0;
};

/// Operation counts used by FlopsMethod::operation_count, per layer:
///   sa   3 N d^2 (q, k, v) + 2 N^2 d (scores, weighted sum)
///   gfn  N d log N (transform pair) + 4 M d (complex gate)
///   fno  N d log N + 4 M d^2
///   afno N d log N + 8 M d^2 / k (two complex block layers)
/// with M = h (w/2 + 1) stored half-spectrum modes. The channel MLP adds
/// 2 r N d^2 (r = mlp ratio), the patch embedding N p^2 c d and the head d C.
FlopsBreakdown estimate_model_flops(MixerKind kind, const VitShape& shape, FlopsMethod method);

// -- latency ------------------------------------------------------------------

struct LatencyRow {
  MixerKind kind = MixerKind::afno;
  std::size_t h = 0, w = 0, n = 0;
  double median_seconds = 0.0;
  double iqr_seconds = 0.0;
  std::size_t repeats = 0;
};

/// Forward-only wall-clock of one mixer on random [h, w, d] input, with
/// gradients disabled, on the calling thread. `warmup` runs are discarded.
std::vector<LatencyRow> bench_latency(MixerKind kind, const std::vector<std::pair<std::size_t, std::size_t>>& sizes,
                                      std::size_t d, std::size_t k, std::size_t repeats = 5, std::size_t warmup = 2,
                                      std::uint64_t seed = 0);

void write_latency_csv(std::ostream& os, const std::vector<LatencyRow>& rows);

// -- shrinkage sparsity -----------------------------------------------------

struct SparsityLayer {
  std::size_t layer = 0;
  double lambda = 0.0;
  std::size_t height = 0, half_width = 0;
  /// Per half-spectrum mode [height, half_width]: fraction of real and
  /// imaginary components (over samples and channels) that soft-shrink sets to
  /// zero. Modes removed by truncation count as fully zero.
  std::vector<double> zero_fraction;
  std::vector<double> radius;  // normalized radial frequency of each mode
  double mean = 0.0;
  double low_quartile_mean = 0.0;   // lowest 25% of modes by radius
  double high_quartile_mean = 0.0;  // highest 25% of modes by radius
};

/// Runs the model on `images` ([B, H, W, c]) and measures, per AFNO layer,
/// how many spectral components the shrinkage zeroes. A component counts as
/// zeroed when lambda > 0 and |value| <= lambda. Throws for non-AFNO models.
std::vector<SparsityLayer> sparsity_stats(const Model& model, const Tensor& images);

/// One `layer,row,col,radius,zero_fraction` row per mode and layer.
void write_sparsity_csv(std::ostream& os, const std::vector<SparsityLayer>& layers);

// -- gradient verification ----------------------------------------------------

struct GradCheckEntry {
  std::string target;  // e.g. "afno/conv1d" or "model/afno"
  std::string param;
  GradCheckReport report;
  double tolerance = 0.0;
  bool passed() const { return report.max_rel_error < tolerance; }
};

inline constexpr double kMixerGradTolerance = 1e-5;
inline constexpr double kModelGradTolerance = 1e-4;

/// Finite-difference check of every parameter (and the input) of every mixer
/// variant on a 4 x 4 x 8 token grid, plus every parameter of depth-2 models
/// whose token grid is 4 x 4 x 8. The loss is a fixed random projection of
/// the output. `kinds` restricts the mixers; empty means all.
std::vector<GradCheckEntry> gradient_suite(std::uint64_t seed, const std::vector<MixerKind>& kinds = {},
                                           bool include_models = true);

}  // namespace afno::analysis
