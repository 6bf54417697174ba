#pragma once

#include <vector>

#include "gnnflavors/tensor.hpp"

// Differentiable operations. Every op validates shapes, computes the result,
// checks the result for non-finite values, and records a backward closure on
// the active tape when any operand requires gradients.

namespace gnnflavors::tg {

// ---- elementwise arithmetic (operands must have identical shapes) ----
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr div(const TensorPtr& a, const TensorPtr& b);

TensorPtr add_scalar(const TensorPtr& a, double s);
TensorPtr mul_scalar(const TensorPtr& a, double s);
TensorPtr neg(const TensorPtr& a);

// ---- unary maps ----
TensorPtr relu(const TensorPtr& a);
TensorPtr leaky_relu(const TensorPtr& a, double slope);
TensorPtr elu(const TensorPtr& a);
TensorPtr tanh_op(const TensorPtr& a);
TensorPtr sigmoid(const TensorPtr& a);
TensorPtr exp_op(const TensorPtr& a);
TensorPtr log_op(const TensorPtr& a);
TensorPtr sqrt_op(const TensorPtr& a);
TensorPtr abs_op(const TensorPtr& a);
TensorPtr square(const TensorPtr& a);

// ---- reductions ----
TensorPtr sum_all(const TensorPtr& a);
TensorPtr mean_all(const TensorPtr& a);

// ---- linear algebra ----
// matmul supports three layouts:
//   [m,k] x [k,n]         -> [m,n]
//   [...,k] x [k,n]       -> [...,n]        (leading axes are batch rows)
//   [m,k] x [...,k,n]     -> [...,m,n]      (shared left matrix per slice)
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose2(const TensorPtr& a);
// x[...,n] + v[n], broadcast over all leading axes.
TensorPtr add_rowvec(const TensorPtr& x, const TensorPtr& v);
// matmul(x, w) + bias (bias may be nullptr).
TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias);

// ---- shape ----
TensorPtr reshape(const TensorPtr& a, Shape shape);
TensorPtr permute(const TensorPtr& a, const std::vector<int>& perm);
TensorPtr concat(const std::vector<TensorPtr>& parts, int axis);
TensorPtr slice_axis(const TensorPtr& a, int axis, std::int64_t start, std::int64_t len);
TensorPtr pad_axis_left(const TensorPtr& a, int axis, std::int64_t n_pad);

// ---- softmax ----
TensorPtr softmax_last(const TensorPtr& a);

// ---- graph / segment ops (row axis is the second-to-last axis) ----
// out[..., e, :] = x[..., idx[e], :]
TensorPtr gather_rows(const TensorPtr& x, const std::vector<std::int64_t>& idx);
// out[..., s, :] = sum over {e : seg[e] == s} of x[..., e, :]; empty segments are zero.
TensorPtr segment_sum(const TensorPtr& x, const std::vector<std::int64_t>& seg,
                      std::int64_t n_segments);
// softmax over each segment of the last axis.
TensorPtr segment_softmax(const TensorPtr& logits, const std::vector<std::int64_t>& seg,
                          std::int64_t n_segments);
// out[..., e, :] = x[..., e, :] * s[..., e]
TensorPtr row_scale(const TensorPtr& x, const TensorPtr& s);
// [d0, d1, ...] -> [n_slices, d0, d1, ...] by repetition.
TensorPtr tile_slices(const TensorPtr& x, std::int64_t n_slices);

// ---- temporal convolution ----
// x[B,C,N,T], w[Co,C,K], bias[Co] (may be nullptr); dilated causal convolution
// along the last axis: out[b,o,n,t] = bias[o] + sum_{c,k} x[b,c,n,t+k*dilation]*w[o,c,k],
// T_out = T - (K-1)*dilation. Output step t is aligned with input step
// t + (K-1)*dilation, i.e. the most recent sample in its window.
TensorPtr conv_time(const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias,
                    std::int64_t dilation);

}  // namespace gnnflavors::tg
