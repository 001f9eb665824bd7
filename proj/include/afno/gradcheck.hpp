#pragma once

#include <cstddef>
#include <functional>

#include "afno/tensor.hpp"

namespace afno {

struct GradCheckReport {
  /// max_i |analytic_i - numeric_i| / max(max|analytic|, max|numeric|, 1e-12)
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  /// Largest gradient magnitude seen; the denominator of max_rel_error.
  double grad_scale = 0.0;
  std::size_t worst_index = 0;
  std::size_t evaluations = 0;
  /// Coordinates whose stencil crossed a relu/soft_shrink switch at `eps` and
  /// were re-differenced with a smaller step, and the smallest step used.
  std::size_t shrunk_steps = 0;
  double min_step = 0.0;
};

using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Compares the reverse-mode gradient of `f` at `theta` with central
/// differences of step `eps`. `theta` is perturbed in place (complex entries
/// on real and imaginary parts separately) and restored afterwards, so `f`
/// may read it either through its argument or through an aliasing handle.
/// A central difference is only taken when both stencil points sit on the
/// same linear piece as theta; otherwise the step shrinks tenfold (at most
/// four times) until they do.
GradCheckReport grad_check_report(const ScalarFn& f, Tensor theta, double eps = 1e-5);

double grad_check(const ScalarFn& f, Tensor theta, double eps = 1e-5);

}  // namespace afno
