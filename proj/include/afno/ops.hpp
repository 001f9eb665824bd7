#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "afno/tensor.hpp"

namespace afno {

/// Trailing-dimension broadcast of two shapes; throws DimensionError if the
/// shapes are incompatible.
Shape broadcast_shape(const Shape& a, const Shape& b);

/// For every flat index of `out`, the flat index of the broadcast source
/// element in a tensor of shape `in`.
std::vector<std::size_t> broadcast_index(const Shape& out, const Shape& in);

enum class ElementwiseOp { add, sub, mul, relu };

/// add/sub/mul broadcast `b` against `a`; relu ignores `b`. Complex relu acts
/// on real and imaginary parts independently.
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b = Tensor());

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::mul, a, b); }
inline Tensor relu(const Tensor& a) { return elementwise(ElementwiseOp::relu, a); }

/// Batched matrix product over the last two axes with broadcast batch axes.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean over one axis, which is removed from the result.
Tensor mean_axis(const Tensor& x, int axis);

Tensor reshape(const Tensor& x, Shape shape);
/// Complex [...] viewed as real [..., 2] (re, im); gradients pass through.
Tensor as_real(const Tensor& z);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor transpose_last2(const Tensor& x);

Tensor softmax_last(const Tensor& x);

/// Per-row normalization over the last axis followed by scale and shift.
Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps = 1e-6);

/// Mean cross-entropy of `logits` [B, C] against integer class labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Mean of squared differences.
Tensor mse(const Tensor& pred, const Tensor& target);

}  // namespace afno
