#include "afno/gradcheck.hpp"

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace afno {

namespace {
constexpr int kMaxShrinks = 4;
}  // namespace

GradCheckReport grad_check_report(const ScalarFn& f, Tensor theta, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  if (!theta.is_leaf()) throw std::invalid_argument("grad_check: theta must be a leaf tensor");

  const bool had_requires_grad = theta.requires_grad();
  theta.set_requires_grad(true);
  theta.zero_grad();

  const std::size_t n = theta.raw().size();
  std::vector<double> analytic(n, 0.0);
  {
    const Tensor loss = f(theta);
    if (loss.requires_grad()) {
      backward(loss);
      if (theta.has_grad()) std::copy(theta.grad().begin(), theta.grad().end(), analytic.begin());
    }
  }
  theta.zero_grad();

  GradCheckReport report;
  report.min_step = eps;
  std::vector<double> numeric(n, 0.0);
  {
    autograd::NoGradGuard no_grad;
    const auto eval = [&](std::uint64_t* signature) {
      autograd::PieceTracker tracker;
      const double v = f(theta).item();
      *signature = tracker.signature();
      ++report.evaluations;
      return v;
    };
    std::uint64_t base = 0;
    eval(&base);
    auto values = theta.raw_mut();
    for (std::size_t i = 0; i < n; ++i) {
      const double original = values[i];
      double step = eps;
      for (int shrink = 0;; ++shrink) {
        std::uint64_t sp = 0, sm = 0;
        values[i] = original + step;
        const double plus = eval(&sp);
        values[i] = original - step;
        const double minus = eval(&sm);
        values[i] = original;
        numeric[i] = (plus - minus) / (2.0 * step);
        if ((sp == base && sm == base) || shrink == kMaxShrinks) break;
        step *= 0.1;
      }
      if (step < eps) {
        ++report.shrunk_steps;
        report.min_step = std::min(report.min_step, step);
      }
    }
  }
  theta.set_requires_grad(had_requires_grad);

  double scale = 1e-12;
  for (std::size_t i = 0; i < n; ++i) scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  for (std::size_t i = 0; i < n; ++i) {
    const double diff = std::abs(analytic[i] - numeric[i]);
    if (diff > report.max_abs_error) {
      report.max_abs_error = diff;
      report.worst_index = i;
    }
  }
  report.grad_scale = scale;
  report.max_rel_error = report.max_abs_error / scale;
  return report;
}

double grad_check(const ScalarFn& f, Tensor theta, double eps) {
  return grad_check_report(f, std::move(theta), eps).max_rel_error;
}

}  // namespace afno
