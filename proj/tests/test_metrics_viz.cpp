#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "stam/errors.hpp"
#include "stam/metrics.hpp"
#include "stam/ops.hpp"
#include "stam/random.hpp"
#include "stam/visualize.hpp"

using namespace stam;

namespace {

TactileSequence random_sequence(std::size_t n, std::size_t side, std::uint64_t seed) {
  Rng rng(seed);
  TactileSequence s;
  for (std::size_t t = 0; t < n; ++t) {
    Image img(static_cast<Eigen::Index>(side), static_cast<Eigen::Index>(side));
    for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = rng.uniform();
    s.frames.push_back(img);
  }
  return s;
}

ModelConfig toy(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.input_h = 16;
  c.input_w = 16;
  c.backbone_channels = {4, 5};
  c.heads = 2;
  c.num_classes = 4;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("ssim self-similarity and symmetry") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Tensor x = uniform_tensor(Shape{3, 9, 11}, 0, 1, rng);
    const Tensor y = uniform_tensor(Shape{3, 9, 11}, 0, 1, rng);
    CHECK(std::abs(colour_ssim(x, x) - 1.0) < 1e-12);
    CHECK(colour_ssim(x, y) == colour_ssim(y, x));
    CHECK(colour_ssim(x, y) < 1.0);
    ColourSsimConfig windowed;
    windowed.mode = ColourSsimConfig::Mode::windowed;
    CHECK(std::abs(colour_ssim(x, x, windowed) - 1.0) < 1e-12);
    CHECK(colour_ssim(x, y, windowed) == colour_ssim(y, x, windowed));
  }
}

TEST_CASE("ssim of constant images") {
  ColourSsimConfig cfg;
  cfg.c1 = 1e-4;
  cfg.c2 = 9e-4;
  const double v = colour_ssim(Tensor::zeros(Shape{5, 5}), Tensor::full(Shape{5, 5}, 1.0), cfg);
  CHECK(v == doctest::Approx(1e-4 / 1.0001).epsilon(1e-12));
  CHECK(std::abs(v - 9.999e-5) < 1e-8);
}

TEST_CASE("ssim averages channels") {
  Rng rng(4);
  const Tensor a = uniform_tensor(Shape{1, 6, 6}, 0, 1, rng), b = uniform_tensor(Shape{1, 6, 6}, 0, 1, rng);
  const Tensor x_parts[] = {a, a}, y_parts[] = {a, b};
  const double mixed = colour_ssim(concat(x_parts, 0), concat(y_parts, 0));
  CHECK(mixed == doctest::Approx((1.0 + colour_ssim(a, b)) / 2.0).epsilon(1e-14));
}

TEST_CASE("windowed ssim with a full-size window is global ssim") {
  Rng rng(5);
  const Tensor x = uniform_tensor(Shape{2, 7, 7}, 0, 1, rng), y = uniform_tensor(Shape{2, 7, 7}, 0, 1, rng);
  ColourSsimConfig w;
  w.mode = ColourSsimConfig::Mode::windowed;
  w.window = 7;
  CHECK(colour_ssim(x, y, w) == doctest::Approx(colour_ssim(x, y)).epsilon(1e-13));
}

TEST_CASE("ssim errors") {
  CHECK_THROWS_AS(colour_ssim(Tensor::zeros(Shape{3, 4}), Tensor::zeros(Shape{4, 3})), ShapeError);
  ColourSsimConfig bad;
  bad.c1 = 0;
  CHECK_THROWS_AS(colour_ssim(Tensor::zeros(Shape{3, 4}), Tensor::zeros(Shape{3, 4}), bad), ConfigError);
  ColourSsimConfig even;
  even.mode = ColourSsimConfig::Mode::windowed;
  even.window = 4;
  CHECK_THROWS_AS(colour_ssim(Tensor::zeros(Shape{8, 8}), Tensor::zeros(Shape{8, 8}), even), ConfigError);
  ColourSsimConfig big;
  big.mode = ColourSsimConfig::Mode::windowed;
  big.window = 9;
  CHECK_THROWS_AS(colour_ssim(Tensor::zeros(Shape{8, 8}), Tensor::zeros(Shape{8, 8}), big), ShapeError);
}

TEST_CASE("gan value function") {
  CHECK(std::abs(gan_value({{0.5, 0.5}, {0.5}}) + 2.0 * std::log(2.0)) < 1e-12);
  CHECK(gan_value({{0.9}, {0.1}}) == doctest::Approx(2.0 * std::log(0.9)).epsilon(1e-14));
  CHECK(std::abs(gan_value({{0.9}, {0.1}}) + 0.210721) < 1e-6);
  const double mixed = gan_value({{0.8, 0.6}, {0.3}});
  CHECK(mixed == doctest::Approx((std::log(0.8) + std::log(0.6)) / 2.0 + std::log(0.7)).epsilon(1e-14));
  CHECK(std::abs(mixed + 0.72366) < 1e-5);
  // Better discrimination raises the value.
  CHECK(gan_value({{0.99}, {0.01}}) > gan_value({{0.9}, {0.1}}));
  CHECK_THROWS_AS(gan_value({{0.0}, {0.5}}), DomainError);
  CHECK_THROWS_AS(gan_value({{0.5}, {1.0}}), DomainError);
  CHECK_THROWS_AS(gan_value({{}, {0.5}}), UsageError);
}

TEST_CASE("grad-cam of a zero classifier is zero") {
  Model m = Model::build(toy(Variant::stam));
  m.fc_weight().mutable_data().setZero();
  const auto maps = grad_cam(m, random_sequence(3, 16, 1), 0);
  REQUIRE(maps.size() == 3);
  for (const auto& s : maps) CHECK(s.values.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("grad-cam maps are nonnegative with sequence maximum one") {
  for (Variant v : {Variant::cnn, Variant::cnn_spatial, Variant::stam}) {
    const Model m = Model::build(toy(v));
    for (int cls = 0; cls < 4; ++cls) {
      const auto maps = grad_cam(m, random_sequence(3, 16, 2 + static_cast<std::uint64_t>(cls)), cls);
      double peak = 0;
      for (const auto& s : maps) {
        CHECK(s.values.rows() == 4);
        CHECK(s.values.minCoeff() >= 0.0);
        peak = std::max(peak, s.values.maxCoeff());
      }
      CHECK((peak == 0.0 || peak == 1.0));
    }
  }
}

TEST_CASE("grad-cam matches the closed form for frame-averaging models") {
  // logit_c = b_c + sum_k W[c,k] mean_{t,y,x} F_tk, so every gradient entry
  // of channel k equals W[c,k] / (n h w).
  const Model m = Model::build(toy(Variant::cnn));
  const TactileSequence s = random_sequence(3, 16, 9);
  const int target = 2;
  const ForwardTrace t = m.trace(s);
  const std::size_t n = 3, c = 5, plane = 16;
  std::vector<Vector> expect;
  double peak = 0;
  for (std::size_t f = 0; f < n; ++f) {
    Vector cam = Vector::Zero(plane);
    for (std::size_t k = 0; k < c; ++k) {
      const double weight = Model(m).fc_weight()[static_cast<std::size_t>(target) * c + k] / static_cast<double>(n * plane);
      for (std::size_t p = 0; p < plane; ++p) cam[static_cast<Eigen::Index>(p)] += weight * t.features[(f * c + k) * plane + p];
    }
    cam = cam.cwiseMax(0.0);
    peak = std::max(peak, cam.maxCoeff());
    expect.push_back(cam);
  }
  REQUIRE(peak > 0);
  const auto maps = grad_cam(m, s, target);
  for (std::size_t f = 0; f < n; ++f) {
    const Vector got = maps[f].values.reshaped<Eigen::RowMajor>();
    CHECK((got - expect[f] / peak).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("grad-cam argument checks") {
  const Model cnn = Model::build(toy(Variant::cnn));
  const TactileSequence s = random_sequence(2, 16, 3);
  CHECK_THROWS_AS(grad_cam(cnn, s, 0, "fc"), ConfigError);
  CHECK_THROWS_AS(grad_cam(cnn, s, 0, "spatial"), ConfigError);
  CHECK_THROWS_AS(grad_cam(cnn, s, 4), UsageError);
  CHECK(grad_cam(Model::build(toy(Variant::stam)), s, 1, "spatial").size() == 2);
}

TEST_CASE("temporal attention export") {
  const std::size_t n = 2, h = 2, w = 3, m = n * h * w;
  const Tensor uniform = Tensor::full(Shape{m, m}, 1.0 / m);
  const auto top = export_temporal_attention(uniform, 4, 3, n, h, w);
  REQUIRE(top.size() == 3);
  CHECK(top[0].flat_index == 0);
  CHECK(top[1].flat_index == 1);
  CHECK(top[2].flat_index == 2);

  Vector onehot = Vector::Zero(m * m);
  onehot[static_cast<Eigen::Index>(5 * m + 10)] = 1.0;
  const auto hot = export_temporal_attention(Tensor(Shape{m, m}, onehot), 5, 1, n, h, w);
  CHECK(hot[0].flat_index == 10);
  CHECK(hot[0].frame == 1);
  CHECK(hot[0].y == 1);
  CHECK(hot[0].x == 1);
  CHECK(hot[0].weight == 1.0);

  Rng rng(6);
  const Tensor random = uniform_tensor(Shape{m, m}, 0, 1, rng);
  for (std::size_t q = 0; q < m; ++q) {
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return random[q * m + a] > random[q * m + b]; });
    const auto ranked = export_temporal_attention(random, q, 5, n, h, w);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(ranked[i].flat_index == order[i]);
      CHECK(ranked[i].frame * h * w + ranked[i].y * w + ranked[i].x == order[i]);
    }
  }

  const AttentionMap maps[] = {{AttentionKind::temporal, uniform}, {AttentionKind::temporal, Tensor(Shape{m, m}, onehot)}};
  CHECK(export_temporal_attention(maps, 5, 1, n, h, w)[0].flat_index == 10);
  CHECK_THROWS_AS(export_temporal_attention(uniform, m, 1, n, h, w), UsageError);
  CHECK_THROWS_AS(export_temporal_attention(uniform, 0, m + 1, n, h, w), UsageError);
  CHECK_THROWS_AS(export_temporal_attention(uniform, 0, 1, n, h, w + 1), ShapeError);
}

TEST_CASE("image helpers") {
  Image img(1, 2);
  img << 0.25, 0.75;
  const Image big = upsample_nearest(img, 3);
  CHECK(big.rows() == 3);
  CHECK(big.cols() == 6);
  CHECK(big(2, 2) == 0.25);
  CHECK(big(0, 3) == 0.75);

  const std::size_t n = 2, h = 1, w = 2, m = 4;
  const Tensor map = Tensor::from(Shape{m, m}, {0.1, 0.2, 0.3, 0.4, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
  const Image row = attention_row_image(map, 0, n, h, w);
  CHECK(row.rows() == 1);
  CHECK(row.cols() == 4);
  CHECK(row(0, 3) == 1.0);
  CHECK(row(0, 0) == doctest::Approx(0.25));
}
