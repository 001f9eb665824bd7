#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace afno {

using cdouble = std::complex<double>;
using Shape = std::vector<std::size_t>;

enum class DType : std::uint8_t { real64 = 0, complex128 = 1 };

/// Raised for every shape or dtype contract violation; the message carries
/// the offending shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);
const char* dtype_name(DType dtype);

namespace detail {
struct TensorImpl;
}

/// Dense row-major array of real or complex doubles.
///
/// A Tensor is a shared handle: copies alias the same buffer. Buffers are only
/// rewritten by whole-tensor updates on leaves (optimizer steps, init), never
/// by ops. Complex tensors store interleaved (re, im) pairs, and their
/// gradients use the same layout: entry 2i holds dL/d(re), 2i+1 dL/d(im).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, DType dtype = DType::real64);
  Tensor(Shape shape, std::vector<double> values);
  Tensor(Shape shape, std::vector<cdouble> values);

  static Tensor scalar(double value);
  static Tensor full(Shape shape, double value);
  static Tensor eye(std::size_t n, DType dtype = DType::real64);
  /// Adopts an already interleaved buffer (length numel or 2*numel).
  static Tensor from_raw(Shape shape, DType dtype, std::vector<double> raw);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  /// Size of an axis; negative axes count from the back.
  std::size_t dim(int axis) const;
  DType dtype() const;
  bool is_complex() const { return dtype() == DType::complex128; }

  /// Underlying doubles; complex tensors expose 2*numel interleaved values.
  std::span<const double> raw() const;
  std::span<const cdouble> complex_values() const;
  double item() const;
  double real_at(std::size_t flat) const { return raw()[flat]; }
  cdouble complex_at(std::size_t flat) const { return complex_values()[flat]; }

  /// In-place whole-tensor update; only legal on leaves.
  std::span<double> raw_mut();

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  Tensor grad_tensor() const;
  void zero_grad();

  /// Fresh leaf with copied data and no history.
  Tensor detach() const;
  Tensor reshaped_copy(Shape shape) const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor make_tensor(std::shared_ptr<detail::TensorImpl>);
};

Tensor make_tensor(std::shared_ptr<detail::TensorImpl> impl);

namespace autograd {

/// One gradient span per op input; empty when that input needs no gradient.
using GradSpans = std::vector<std::span<double>>;
using BackwardFn = std::function<void(std::span<const double> grad_out, const GradSpans& grad_in)>;

/// Creates the result of a differentiable op. When gradients are enabled and
/// any input requires them, the result is linked to its inputs through a
/// graph node holding `backward`; otherwise `backward` is dropped.
Tensor record(std::string_view op, Shape shape, DType dtype, std::vector<double> values,
              std::vector<Tensor> inputs, BackwardFn backward);

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// While alive, piecewise-linear ops on this thread (relu, soft_shrink) fold
/// the piece each input component falls on into a running hash. Equal
/// signatures from two evaluations mean every switch took the same side.
class PieceTracker {
 public:
  PieceTracker();
  ~PieceTracker();
  PieceTracker(const PieceTracker&) = delete;
  PieceTracker& operator=(const PieceTracker&) = delete;

  std::uint64_t signature() const { return hash_; }
  void note(int piece);

  /// Innermost tracker of the calling thread, or nullptr.
  static PieceTracker* active();

 private:
  PieceTracker* previous_;
  std::uint64_t hash_ = 14695981039346656037ull;
};

}  // namespace autograd

struct GraphNodeInfo {
  std::string op;  // "leaf" for tensors without a recorded producer
  std::vector<std::size_t> inputs;
};

/// Snapshot of the recorded computation reachable from a root, in
/// topological order (inputs before consumers).
class Graph {
 public:
  static Graph trace(const Tensor& root);

  const std::vector<GraphNodeInfo>& nodes() const { return nodes_; }
  std::size_t op_count() const;
  bool is_topological() const;

 private:
  std::vector<GraphNodeInfo> nodes_;
};

/// Reverse-mode sweep from a real scalar loss. Populates grad on every leaf
/// that requires it and consumes the graph (intermediate links are dropped).
/// Returns the number of op nodes executed.
std::size_t backward(const Tensor& loss);

}  // namespace afno
