#pragma once

#include <cstddef>
#include <span>

#include "dualprior/tensor.hpp"

namespace dualprior {

// Broadcasting is limited to exact shapes and scalars (numel 1 on the right).

enum class ElementwiseOp { kAdd, kSub, kMul };

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor scale(const Tensor& a, double s);
Tensor silu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// mean((a - b)^2)
Tensor mse(const Tensor& a, const Tensor& b);
/// Mean binary cross-entropy of sigmoid(logits) against targets in [0, 1].
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

/// Value copy with no path back to its input.
Tensor stop_gradient(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);

/// [N, D] x [D, K] -> [N, K]
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[N, K] + b[K] per row.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

/// Cross-correlation of x[N, C, H, W] with w[K, C, kh, kw].
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding);
/// x[N, C, H, W] + b[C]
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
/// x[N, C, H, W] + e[N, C], one offset per sample and channel.
Tensor add_sample_channel_bias(const Tensor& x, const Tensor& e);

/// [N, C, H, W] -> [N, C*f*f, H/f, W/f]; output channel c*f*f + dy*f + dx.
Tensor space_to_depth(const Tensor& x, std::size_t factor);
Tensor upsample_nearest(const Tensor& x, std::size_t factor);

/// Multiply sample n (leading axis) by the constant coeffs[n].
Tensor scale_per_sample(const Tensor& x, std::span<const double> coeffs);
/// Gather a subset of samples along the leading axis.
Tensor select_samples(const Tensor& x, std::span<const std::size_t> indices);

}  // namespace dualprior
