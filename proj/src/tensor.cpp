#include "afno/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

namespace afno {

namespace detail {

struct GraphNode {
  std::string op;
  std::vector<Tensor> inputs;
  autograd::BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  DType dtype = DType::real64;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;
  std::shared_ptr<GraphNode> node;
};

}  // namespace detail

namespace {

std::size_t width_of(DType dtype) { return dtype == DType::complex128 ? 2 : 1; }

std::shared_ptr<detail::TensorImpl> new_impl(Shape shape, DType dtype, std::vector<double> data) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (data.size() != shape_numel(shape) * width_of(dtype)) {
    throw DimensionError("buffer of " + std::to_string(data.size()) + " doubles does not match " +
                         dtype_name(dtype) + " shape " + shape_str(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->dtype = dtype;
  impl->data = std::move(data);
  return impl;
}

thread_local bool g_grad_enabled = true;
thread_local autograd::PieceTracker* g_piece_tracker = nullptr;

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

const char* dtype_name(DType dtype) { return dtype == DType::complex128 ? "complex128" : "real64"; }

Tensor make_tensor(std::shared_ptr<detail::TensorImpl> impl) { return Tensor(std::move(impl)); }

Tensor::Tensor(Shape shape, DType dtype) {
  const std::size_t n = shape_numel(shape) * width_of(dtype);
  impl_ = new_impl(std::move(shape), dtype, std::vector<double>(n, 0.0));
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : impl_(new_impl(std::move(shape), DType::real64, std::move(values))) {}

Tensor::Tensor(Shape shape, std::vector<cdouble> values) {
  std::vector<double> raw(values.size() * 2);
  for (std::size_t i = 0; i < values.size(); ++i) {
    raw[2 * i] = values[i].real();
    raw[2 * i + 1] = values[i].imag();
  }
  impl_ = new_impl(std::move(shape), DType::complex128, std::move(raw));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::eye(std::size_t n, DType dtype) {
  Tensor t(Shape{n, n}, dtype);
  auto raw = t.raw_mut();
  for (std::size_t i = 0; i < n; ++i) raw[(i * n + i) * width_of(dtype)] = 1.0;
  return t;
}

Tensor Tensor::from_raw(Shape shape, DType dtype, std::vector<double> raw) {
  return Tensor(new_impl(std::move(shape), dtype, std::move(raw)));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::size_t Tensor::dim(int axis) const {
  const auto& s = shape();
  const int r = static_cast<int>(s.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[static_cast<std::size_t>(a)];
}

DType Tensor::dtype() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->dtype;
}

std::span<const double> Tensor::raw() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->data;
}

std::span<const cdouble> Tensor::complex_values() const {
  if (!is_complex()) throw DimensionError("complex view requested on real tensor");
  // std::complex<double> is layout-compatible with double[2].
  return {reinterpret_cast<const cdouble*>(impl_->data.data()), impl_->data.size() / 2};
}

double Tensor::item() const {
  if (numel() != 1 || is_complex()) {
    throw DimensionError("item() needs a real single-element tensor, got " + shape_str(shape()));
  }
  return impl_->data[0];
}

std::span<double> Tensor::raw_mut() {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  if (impl_->node) throw std::logic_error("in-place update of a non-leaf tensor");
  return impl_->data;
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  if (impl_->node) throw std::logic_error("requires_grad can only be set on leaves");
  impl_->requires_grad = on;
  if (!on) impl_->grad.clear();
  return *this;
}

bool Tensor::is_leaf() const { return impl_ && !impl_->node; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient");
  return impl_->grad;
}

Tensor Tensor::grad_tensor() const {
  return Tensor::from_raw(shape(), dtype(), std::vector<double>(grad().begin(), grad().end()));
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

Tensor Tensor::detach() const { return from_raw(shape(), dtype(), impl_->data); }

Tensor Tensor::reshaped_copy(Shape new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_str(shape()) + " to " + shape_str(new_shape));
  }
  return from_raw(std::move(new_shape), dtype(), impl_->data);
}

namespace autograd {

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

PieceTracker::PieceTracker() : previous_(g_piece_tracker) { g_piece_tracker = this; }
PieceTracker::~PieceTracker() { g_piece_tracker = previous_; }

void PieceTracker::note(int piece) {
  // FNV-1a over one byte per component
  hash_ ^= static_cast<std::uint8_t>(piece);
  hash_ *= 1099511628211ull;
}

PieceTracker* PieceTracker::active() { return g_piece_tracker; }

Tensor record(std::string_view op, Shape shape, DType dtype, std::vector<double> values,
              std::vector<Tensor> inputs, BackwardFn backward) {
  auto impl = new_impl(std::move(shape), dtype, std::move(values));
#ifndef NDEBUG
  bool inputs_finite = true;
  for (const auto& in : inputs) {
    for (double v : in.raw()) inputs_finite = inputs_finite && std::isfinite(v);
  }
  if (inputs_finite) {
    for (double v : impl->data) {
      if (!std::isfinite(v)) throw std::domain_error("non-finite value produced by op " + std::string(op));
    }
  }
#endif
  const bool track = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                                   [](const Tensor& t) { return t.requires_grad(); });
  if (track) {
    impl->requires_grad = true;
    impl->node = std::make_shared<detail::GraphNode>(
        detail::GraphNode{std::string(op), std::move(inputs), std::move(backward)});
  }
  return make_tensor(std::move(impl));
}

}  // namespace autograd

namespace {

// Post-order DFS; every reachable impl appears once, inputs first.
std::vector<detail::TensorImpl*> topological_order(detail::TensorImpl* root) {
  std::vector<detail::TensorImpl*> order;
  std::unordered_map<detail::TensorImpl*, bool> done;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack{{root, 0}};
  done[root] = false;
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const std::size_t n_inputs = impl->node ? impl->node->inputs.size() : 0;
    if (next < n_inputs) {
      detail::TensorImpl* child = impl->node->inputs[next++].impl();
      if (!done.contains(child)) {
        done[child] = false;
        stack.emplace_back(child, 0);
      }
      continue;
    }
    done[impl] = true;
    order.push_back(impl);
    stack.pop_back();
  }
  return order;
}

}  // namespace

Graph Graph::trace(const Tensor& root) {
  Graph g;
  const auto order = topological_order(root.impl());
  std::unordered_map<const detail::TensorImpl*, std::size_t> index;
  for (std::size_t i = 0; i < order.size(); ++i) index[order[i]] = i;
  for (const auto* impl : order) {
    GraphNodeInfo info;
    info.op = impl->node ? impl->node->op : "leaf";
    if (impl->node) {
      for (const auto& in : impl->node->inputs) info.inputs.push_back(index.at(in.impl()));
    }
    g.nodes_.push_back(std::move(info));
  }
  return g;
}

std::size_t Graph::op_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const GraphNodeInfo& n) { return n.op != "leaf"; }));
}

bool Graph::is_topological() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    for (std::size_t in : nodes_[i].inputs) {
      if (in >= i) return false;
    }
  }
  return true;
}

std::size_t backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward on undefined tensor");
  if (loss.numel() != 1 || loss.is_complex()) {
    throw DimensionError("backward needs a real scalar loss, got " + std::string(dtype_name(loss.dtype())) +
                         " " + shape_str(loss.shape()));
  }
  detail::TensorImpl* root = loss.impl();
  if (!root->requires_grad) throw std::invalid_argument("loss is not connected to any tensor requiring grad");

  const auto order = topological_order(root);
  root->grad.assign(1, 1.0);
  std::size_t executed = 0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* impl = *it;
    if (!impl->node || impl->grad.empty()) continue;
    autograd::GradSpans spans;
    spans.reserve(impl->node->inputs.size());
    for (const auto& in : impl->node->inputs) {
      detail::TensorImpl* target = in.impl();
      if (!target->requires_grad) {
        spans.emplace_back();
        continue;
      }
      if (target->grad.empty()) target->grad.assign(target->data.size(), 0.0);
      spans.emplace_back(target->grad);
    }
    impl->node->backward(impl->grad, spans);
    ++executed;
  }
  for (auto* impl : order) {
    if (impl->node) {
      impl->grad.clear();
      impl->grad.shrink_to_fit();
      impl->node.reset();
    }
  }
  return executed;
}

}  // namespace afno
