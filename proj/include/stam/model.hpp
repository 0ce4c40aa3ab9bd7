#pragma once

// The three ablation variants behind one interface:
//
//   cnn          backbone -> per-frame global average -> frame mean -> FC
//   cnn_spatial  backbone -> spatial gate -> per-frame global average -> frame mean -> FC
//   stam         backbone -> spatial gate -> flatten sequence -> multi-head temporal
//                attention -> mean over the m positions -> FC
//
// The backbone is a stack of (conv3x3 same -> relu -> 2x2 average) blocks.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stam/attention.hpp"
#include "stam/data.hpp"
#include "stam/tensor.hpp"

namespace stam {

enum class Variant { cnn, cnn_spatial, stam };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

enum class InputNorm { fixed, per_frame };

std::string to_string(InputNorm n);
InputNorm parse_input_norm(const std::string& s);

struct ModelConfig {
  Variant variant = Variant::stam;
  std::size_t input_h = 32;
  std::size_t input_w = 32;
  std::size_t input_channels = 1;
  // per_frame: each frame becomes (x - mean_t) / (std_t + input_eps).
  // fixed:     x -> (x - input_mean) / input_std for every frame.
  InputNorm input_norm = InputNorm::per_frame;
  double input_eps = 0.01;
  double input_mean = 0.5;
  double input_std = 0.25;
  std::vector<std::size_t> backbone_channels{8, 16, 16};
  std::size_t heads = 4;
  std::size_t num_classes = 10;
  std::uint64_t seed = 1;

  std::size_t feature_h() const { return input_h >> backbone_channels.size(); }
  std::size_t feature_w() const { return input_w >> backbone_channels.size(); }
  std::size_t feature_channels() const { return backbone_channels.back(); }
  /// Width of the vector entering the classifier.
  std::size_t head_input() const;

  void validate() const;
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
};

struct ConvLayer {
  Tensor kernel;  // [cout x cin x 3 x 3]
  Tensor bias;    // [cout]
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct ForwardOptions {
  /// Replaces the spatial gate by an all-ones map (variant nesting checks).
  bool identity_spatial_gate = false;
};

/// Intermediate values of one forward pass over a single sequence.
struct ForwardTrace {
  Tensor features;  // backbone output [n x c x h' x w']
  std::optional<AttentionMap> spatial;
  Tensor gated;     // features after the spatial gate (== features for cnn)
  std::vector<AttentionMap> temporal;  // one [m x m] map per head (stam)
  Tensor logits;    // [K]
};

class Model {
 public:
  static Model build(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  /// Parameter handles in a fixed order; updating them updates the model.
  std::vector<NamedTensor> parameters() const;
  std::size_t parameter_count() const;
  /// Rebinds parameter handles, in parameters() order, to `tensors`.
  void set_parameters(const std::vector<Tensor>& tensors);

  /// Logits [K] for one sequence.
  Tensor forward(const TactileSequence& seq, const ForwardOptions& options = {}) const;
  /// Logits [B x K]; all sequences must share the same length.
  Tensor forward_batch(std::span<const TactileSequence* const> batch, const ForwardOptions& options = {}) const;
  ForwardTrace trace(const TactileSequence& seq, const ForwardOptions& options = {}) const;

  /// Deep copy with independent parameter storage.
  Model clone() const;

  std::vector<ConvLayer>& backbone() { return backbone_; }
  SpatialAttentionParams& spatial() { return spatial_; }
  std::vector<TemporalAttentionHead>& heads() { return heads_; }
  Tensor& fc_weight() { return fc_weight_; }
  Tensor& fc_bias() { return fc_bias_; }

 private:
  Tensor run(const Tensor& frames, std::size_t batch, std::size_t length, const ForwardOptions& options,
             ForwardTrace* trace) const;

  ModelConfig config_;
  std::vector<ConvLayer> backbone_;
  SpatialAttentionParams spatial_;
  std::vector<TemporalAttentionHead> heads_;
  Tensor fc_weight_;  // [K x head_input]
  Tensor fc_bias_;    // [K]
};

struct TrainingMeta {
  std::size_t epoch = 0;
  double loss = 0.0;
  std::string rng_state;
};

struct Checkpoint {
  Model model;
  TrainingMeta meta;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, little-endian:
///   "STAM" | u32 version | u64 header length | UTF-8 key=value header |
///   records of (u64 name length, name, u64 rank, u64 dims..., f64 payload...)
void save_checkpoint(const Model& model, const std::filesystem::path& path, const TrainingMeta& meta = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace stam
