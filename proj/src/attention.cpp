#include "stam/attention.hpp"

#include <cmath>

#include "stam/errors.hpp"
#include "stam/ops.hpp"

namespace stam {

SpatialAttentionParams SpatialAttentionParams::init(Rng& rng) {
  const double bound = std::sqrt(3.0 / (2.0 * kSpatialKernel * kSpatialKernel));
  return {uniform_tensor(Shape{1, 2, kSpatialKernel, kSpatialKernel}, -bound, bound, rng, true),
          Tensor::zeros(Shape{1}, true)};
}

SpatialAttentionParams SpatialAttentionParams::zeros() {
  return {Tensor::zeros(Shape{1, 2, kSpatialKernel, kSpatialKernel}, true), Tensor::zeros(Shape{1}, true)};
}

TemporalAttentionHead TemporalAttentionHead::init(std::size_t channels, Rng& rng) {
  const double bound = std::sqrt(3.0 / static_cast<double>(channels));
  TemporalAttentionHead h;
  h.w_q = uniform_tensor(Shape{channels, channels}, -bound, bound, rng, true);
  h.w_k = uniform_tensor(Shape{channels, channels}, -bound, bound, rng, true);
  h.w_v = uniform_tensor(Shape{channels, channels}, -bound, bound, rng, true);
  return h;
}

TemporalAttentionHead TemporalAttentionHead::zeros(std::size_t channels) {
  return {Tensor::zeros(Shape{channels, channels}, true), Tensor::zeros(Shape{channels, channels}, true),
          Tensor::zeros(Shape{channels, channels}, true)};
}

AttentionMap spatial_attention_map(const Tensor& f, const SpatialAttentionParams& p) {
  const std::size_t channel_axis = f.rank() - 3;
  const Tensor pooled[] = {channel_max_pool(f), channel_avg_pool(f)};
  Tensor stacked = concat(pooled, channel_axis);
  return {AttentionKind::spatial, sigmoid(conv2d(stacked, p.kernel, p.bias, Padding::same))};
}

Tensor apply_spatial(const Tensor& f, const AttentionMap& gate) {
  if (gate.kind != AttentionKind::spatial) throw UsageError("apply_spatial: expected a spatial attention map");
  return mul(f, gate.weights);
}

Tensor flatten_sequence(std::span<const Tensor> frames) {
  if (frames.empty()) throw ShapeError("flatten_sequence: empty frame list");
  for (const auto& f : frames) {
    if (f.rank() != 3 || f.shape() != frames.front().shape()) {
      throw ShapeError("flatten_sequence: frame shape " + f.shape().str() + " differs from " +
                       frames.front().shape().str());
    }
  }
  const Shape& s = frames.front().shape();
  std::vector<Tensor> stacked;
  stacked.reserve(frames.size());
  for (const auto& f : frames) stacked.push_back(reshape(f, Shape{1, s[0], s[1], s[2]}));
  return flatten_positions(concat(stacked, 0));
}

std::vector<Tensor> unflatten_sequence(const Tensor& fsn, std::size_t n, std::size_t h, std::size_t w) {
  Tensor stack = unflatten_positions(fsn, n, h, w);
  const std::size_t c = stack.shape()[1];
  std::vector<Tensor> frames;
  for (std::size_t t = 0; t < n; ++t) frames.push_back(reshape(slice(stack, t, 1), Shape{c, h, w}));
  return frames;
}

TemporalOutput temporal_attention(const Tensor& fsn, const TemporalAttentionHead& head) {
  if (fsn.rank() != 2) throw ShapeError("temporal_attention: expected [m x c], got " + fsn.shape().str());
  const std::size_t c = fsn.shape()[1];
  if (head.w_q.shape() != Shape{c, c} || head.w_k.shape() != Shape{c, c} || head.w_v.shape() != Shape{c, c}) {
    throw ShapeError("temporal_attention: head of shape " + head.w_q.shape().str() + " for features " +
                     fsn.shape().str());
  }
  Tensor q = matmul(fsn, transpose(head.w_q));
  Tensor k = matmul(fsn, transpose(head.w_k));
  Tensor v = matmul(fsn, transpose(head.w_v));
  // Row j of k q^T holds s_ij over sources i, so a row softmax normalizes over i.
  Tensor attn = softmax_rows(matmul(k, transpose(q)));
  Tensor out = add(matmul(attn, v), fsn);
  return {out, {AttentionKind::temporal, attn}};
}

MultiHeadOutput multi_head_temporal(const Tensor& fsn, std::span<const TemporalAttentionHead> heads) {
  if (heads.empty()) throw ConfigError("multi_head_temporal: at least one head is required");
  MultiHeadOutput result;
  std::vector<Tensor> blocks;
  for (const auto& head : heads) {
    TemporalOutput o = temporal_attention(fsn, head);
    blocks.push_back(o.output);
    result.maps.push_back(o.map);
  }
  result.output = blocks.size() == 1 ? blocks.front() : concat(blocks, 1);
  return result;
}

Tensor average_maps(std::span<const AttentionMap> maps) {
  if (maps.empty()) throw UsageError("average_maps: no maps");
  Vector acc = Vector::Zero(maps.front().weights.data().size());
  for (const auto& m : maps) {
    if (m.weights.shape() != maps.front().weights.shape()) throw ShapeError("average_maps: mismatched maps");
    acc += m.weights.data();
  }
  acc /= static_cast<double>(maps.size());
  return Tensor(maps.front().weights.shape(), std::move(acc));
}

}  // namespace stam
