#include "stam/metrics.hpp"

#include <cmath>

#include "stam/errors.hpp"

namespace stam {

void ColourSsimConfig::validate() const {
  if (!(c1 > 0.0) || !(c2 > 0.0)) throw ConfigError("colour_ssim: C1 and C2 must be positive");
  if (mode == Mode::windowed && (window == 0 || window % 2 == 0)) {
    throw ConfigError("colour_ssim: window must be a positive odd size");
  }
}

namespace {

double ssim_index(const Eigen::ArrayXd& x, const Eigen::ArrayXd& y, double c1, double c2) {
  const double mx = x.mean(), my = y.mean();
  const double vx = (x - mx).square().mean();
  const double vy = (y - my).square().mean();
  const double cov = ((x - mx) * (y - my)).mean();
  return ((2.0 * (mx * my) + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

}  // namespace

double colour_ssim(const Tensor& x, const Tensor& y, const ColourSsimConfig& cfg) {
  cfg.validate();
  if (x.shape() != y.shape()) {
    throw ShapeError("colour_ssim: shapes " + x.shape().str() + " and " + y.shape().str() + " differ");
  }
  if (x.rank() != 2 && x.rank() != 3) throw ShapeError("colour_ssim: expected [c x h x w], got " + x.shape().str());
  const std::size_t channels = x.rank() == 3 ? x.shape()[0] : 1;
  const std::size_t h = x.shape().back(1), w = x.shape().back(0);
  const std::size_t plane = h * w;

  double total = 0.0;
  for (std::size_t c = 0; c < channels; ++c) {
    const auto off = static_cast<Eigen::Index>(c * plane);
    const Eigen::ArrayXd xc = x.data().segment(off, static_cast<Eigen::Index>(plane)).array();
    const Eigen::ArrayXd yc = y.data().segment(off, static_cast<Eigen::Index>(plane)).array();
    if (cfg.mode == ColourSsimConfig::Mode::global) {
      total += ssim_index(xc, yc, cfg.c1, cfg.c2);
      continue;
    }
    const std::size_t win = cfg.window;
    if (win > h || win > w) throw ShapeError("colour_ssim: window larger than image " + x.shape().str());
    Eigen::Map<const MatrixRM> xm(xc.data(), static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(w));
    Eigen::Map<const MatrixRM> ym(yc.data(), static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(w));
    double acc = 0.0;
    std::size_t count = 0;
    const auto k = static_cast<Eigen::Index>(win);
    for (std::size_t r = 0; r + win <= h; ++r) {
      for (std::size_t q = 0; q + win <= w; ++q) {
        const MatrixRM px = xm.block(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(q), k, k);
        const MatrixRM py = ym.block(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(q), k, k);
        acc += ssim_index(px.reshaped().array(), py.reshaped().array(), cfg.c1, cfg.c2);
        ++count;
      }
    }
    total += acc / static_cast<double>(count);
  }
  return total / static_cast<double>(channels);
}

double gan_value(const GanScoreBatch& batch) {
  if (batch.real_scores.empty() || batch.fake_scores.empty()) {
    throw UsageError("gan_value: real and fake score lists must be nonempty");
  }
  auto check = [](double s, const char* which) {
    if (!(s > 0.0 && s < 1.0)) {
      throw DomainError(std::string("gan_value: ") + which + " score " + std::to_string(s) +
                        " outside (0, 1), log diverges");
    }
  };
  double real = 0.0, fake = 0.0;
  for (double s : batch.real_scores) {
    check(s, "real");
    real += std::log(s);
  }
  for (double s : batch.fake_scores) {
    check(s, "fake");
    fake += std::log1p(-s);
  }
  return real / static_cast<double>(batch.real_scores.size()) + fake / static_cast<double>(batch.fake_scores.size());
}

}  // namespace stam
