#pragma once

// Spatial and temporal attention blocks.
//
// Spatial attention gates each frame's feature map with
//   A_S(F) = sigmoid(conv7x7([max_c F ; mean_c F])),   F_S = A_S(F) * F.
//
// Temporal attention mixes all m = n*h*w positions of a flattened sequence
// X [m x c]. With q = X Wq^T, k = X Wk^T, v = X Wv^T and s_ij = <q_i, k_j>,
//   A[j, i] = exp(s_ij) / sum_i' exp(s_i'j),
//   out_j   = sum_i A[j, i] v_i + X_j.
// Scores are not scaled by 1/sqrt(c) and the residual has no gain.

#include <cstddef>
#include <span>
#include <vector>

#include "stam/random.hpp"
#include "stam/tensor.hpp"

namespace stam {

inline constexpr std::size_t kSpatialKernel = 7;

struct SpatialAttentionParams {
  Tensor kernel;  // [1 x 2 x 7 x 7]
  Tensor bias;    // [1]

  static SpatialAttentionParams init(Rng& rng);
  static SpatialAttentionParams zeros();
};

struct TemporalAttentionHead {
  Tensor w_q;  // [c x c]
  Tensor w_k;  // [c x c]
  Tensor w_v;  // [c x c]

  std::size_t channels() const { return w_q.shape()[0]; }

  static TemporalAttentionHead init(std::size_t channels, Rng& rng);
  static TemporalAttentionHead zeros(std::size_t channels);
};

enum class AttentionKind { spatial, temporal };

struct AttentionMap {
  AttentionKind kind;
  /// Spatial: [1 x h x w] or [N x 1 x h x w], values in (0, 1).
  /// Temporal: [m x m]; row j holds the weights over source positions i.
  Tensor weights;
};

/// Works on a single map [c x h x w] or a frame stack [N x c x h x w].
AttentionMap spatial_attention_map(const Tensor& f, const SpatialAttentionParams& p);

/// Multiplies every channel of `f` by the gate.
Tensor apply_spatial(const Tensor& f, const AttentionMap& gate);

/// Concatenates frames [c x h x w] into [n*h*w x c], frame-major then
/// row-major within a frame.
Tensor flatten_sequence(std::span<const Tensor> frames);
std::vector<Tensor> unflatten_sequence(const Tensor& fsn, std::size_t n, std::size_t h, std::size_t w);

struct TemporalOutput {
  Tensor output;  // [m x c]
  AttentionMap map;
};

TemporalOutput temporal_attention(const Tensor& fsn, const TemporalAttentionHead& head);

struct MultiHeadOutput {
  Tensor output;  // [m x c*H], head blocks in head order
  std::vector<AttentionMap> maps;
};

MultiHeadOutput multi_head_temporal(const Tensor& fsn, std::span<const TemporalAttentionHead> heads);

/// Elementwise mean of several temporal maps.
Tensor average_maps(std::span<const AttentionMap> maps);

}  // namespace stam
