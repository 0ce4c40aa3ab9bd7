#pragma once

#include <cstddef>
#include <vector>

#include "stam/tensor.hpp"

namespace stam {

struct ColourSsimConfig {
  enum class Mode { global, windowed };

  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
  Mode mode = Mode::global;
  std::size_t window = 7;  // odd, windowed mode only

  void validate() const;
};

/// Colour structural similarity of two images [c x h x w] (or [h x w]).
///
/// Per channel i, with population statistics,
///   (2 mu_x mu_y + C1)(2 sigma_xy + C2) / ((mu_x^2 + mu_y^2 + C1)(sigma_x^2 + sigma_y^2 + C2)),
/// averaged over channels. Global mode takes the statistics over the whole
/// channel; windowed mode averages the index over every fully contained
/// window x window patch first.
double colour_ssim(const Tensor& x, const Tensor& y, const ColourSsimConfig& cfg = {});

struct GanScoreBatch {
  std::vector<double> real_scores;  // D(x|y)
  std::vector<double> fake_scores;  // D(G(z|y))
};

/// Conditional-GAN value function, mean log D(x|y) + mean log(1 - D(G(z|y))).
double gan_value(const GanScoreBatch& batch);

}  // namespace stam
