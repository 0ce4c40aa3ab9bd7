#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "stam/attention.hpp"
#include "stam/data.hpp"
#include "stam/model.hpp"

namespace stam {

struct SaliencyMap {
  Image values;  // nonnegative
};

/// Grad-CAM over a sequence. Frame t's map is relu(sum_k a_tk F_tk) with a_tk
/// the spatial mean of d logit[target] / d F_tk. All frames are divided by the
/// largest value over the sequence, so the sequence maximum is 0 or 1 and
/// frame masses stay comparable.
///
/// `layer` is "backbone" (backbone output) or "spatial" (after the gate;
/// attention variants only).
std::vector<SaliencyMap> grad_cam(const Model& model, const TactileSequence& seq, int target_class,
                                  const std::string& layer = "backbone");

struct RankedPosition {
  std::size_t flat_index = 0;
  std::size_t frame = 0;
  std::size_t y = 0;
  std::size_t x = 0;
  double weight = 0.0;
};

/// The k source positions with the largest weight in row `query` of a
/// temporal map [m x m], m = n*h*w; ties go to the lowest flat index.
std::vector<RankedPosition> export_temporal_attention(const Tensor& map, std::size_t query, std::size_t k,
                                                      std::size_t n, std::size_t h, std::size_t w);
/// Multi-head variant: maps are averaged before ranking.
std::vector<RankedPosition> export_temporal_attention(std::span<const AttentionMap> maps, std::size_t query,
                                                      std::size_t k, std::size_t n, std::size_t h, std::size_t w);

/// Nearest-neighbour enlargement by an integer factor.
Image upsample_nearest(const Image& img, std::size_t factor);

/// Row `query` of a temporal map laid out as n frames side by side [h x n*w],
/// scaled so the largest weight is 1.
Image attention_row_image(const Tensor& map, std::size_t query, std::size_t n, std::size_t h, std::size_t w);

void write_ranked_csv(const std::filesystem::path& path, std::size_t query, std::span<const RankedPosition> ranked);

}  // namespace stam
