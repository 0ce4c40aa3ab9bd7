#pragma once

// Differentiable operations over Tensor.
//
// Spatial layouts are [c x h x w] for a single map and [N x c x h x w] for a
// stack of N maps (frames); channel ops act on the third axis from the back.

#include <cstddef>
#include <span>
#include <vector>

#include "stam/tensor.hpp"

namespace stam {

// Elementwise arithmetic. `b` may equal `a` in shape, or be a single-channel
// map [..., 1, h, w] broadcast against a c-channel tensor [..., c, h, w].
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

enum class Padding { same, valid };

/// 2-D cross-correlation (no kernel flip). `input` is [cin x h x w] or
/// [N x cin x h x w]; `kernel` is [cout x cin x k x k]; `bias` is [cout].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Padding padding);

/// Max over the channel axis. Gradient goes to the first maximal channel.
Tensor channel_max_pool(const Tensor& f);
Tensor channel_avg_pool(const Tensor& f);

/// Non-overlapping 2x2 average downsampling; h and w must be even.
Tensor avg_pool2x2(const Tensor& f);

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
/// Row-wise softmax of a 2-D tensor, stabilized by subtracting each row max.
Tensor softmax_rows(const Tensor& x);

/// Mean cross-entropy of logits [K] or [B x K] against class labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
/// Concatenate along `axis`; all other dimensions must agree.
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
/// Rows [begin, begin + count) of the leading axis.
Tensor slice(const Tensor& x, std::size_t begin, std::size_t count);

/// [N x c x h x w] -> [N*h*w x c], row index t*h*w + y*w + x.
Tensor flatten_positions(const Tensor& x);
/// Inverse of flatten_positions.
Tensor unflatten_positions(const Tensor& x, std::size_t n, std::size_t h, std::size_t w);

/// Mean over the two spatial axes: [N x c x h x w] -> [N x c], [c x h x w] -> [c].
Tensor spatial_mean(const Tensor& x);
/// Means of consecutive row groups: [R x c] -> [R/group x c].
Tensor group_mean_rows(const Tensor& x, std::size_t group);

/// x [R x K] plus bias [K] on every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// x [R x d] times weight[K x d] transposed, plus bias [K].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

}  // namespace stam
