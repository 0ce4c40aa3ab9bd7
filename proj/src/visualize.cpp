#include "stam/visualize.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "stam/errors.hpp"
#include "stam/ops.hpp"

namespace stam {

std::vector<SaliencyMap> grad_cam(const Model& model, const TactileSequence& seq, int target_class,
                                  const std::string& layer) {
  if (layer != "backbone" && layer != "spatial") {
    throw ConfigError("grad_cam: unknown layer '" + layer + "' (expected backbone or spatial)");
  }
  if (layer == "spatial" && model.config().variant == Variant::cnn) {
    throw ConfigError("grad_cam: the cnn variant has no spatial attention layer");
  }
  const std::size_t classes = model.config().num_classes;
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= classes) {
    throw UsageError("grad_cam: class " + std::to_string(target_class) + " outside [0, " + std::to_string(classes) +
                     ")");
  }

  Tape tape;
  ForwardTrace trace;
  {
    TapeScope scope(tape);
    trace = model.trace(seq);
    Tensor selector = Tensor::zeros(Shape{classes});
    selector.mutable_data()[target_class] = 1.0;
    backward(sum(mul(trace.logits, selector)), tape);
  }
  const Tensor& f = layer == "backbone" ? trace.features : trace.gated;
  const Vector grad = f.grad();
  const std::size_t n = f.shape()[0], c = f.shape()[1], h = f.shape()[2], w = f.shape()[3];
  const std::size_t plane = h * w;

  std::vector<SaliencyMap> maps;
  double peak = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    Vector cam = Vector::Zero(static_cast<Eigen::Index>(plane));
    for (std::size_t k = 0; k < c; ++k) {
      const auto off = static_cast<Eigen::Index>((t * c + k) * plane);
      const double weight = grad.segment(off, static_cast<Eigen::Index>(plane)).mean();
      cam += weight * f.data().segment(off, static_cast<Eigen::Index>(plane));
    }
    cam = cam.cwiseMax(0.0);
    peak = std::max(peak, cam.maxCoeff());
    maps.push_back({Eigen::Map<const MatrixRM>(cam.data(), static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(w))});
  }
  if (peak > 0.0) {
    for (auto& m : maps) m.values /= peak;
  }
  return maps;
}

std::vector<RankedPosition> export_temporal_attention(const Tensor& map, std::size_t query, std::size_t k,
                                                      std::size_t n, std::size_t h, std::size_t w) {
  const std::size_t m = n * h * w;
  if (map.rank() != 2 || map.shape()[0] != m || map.shape()[1] != m) {
    throw ShapeError("export_temporal_attention: map " + map.shape().str() + " is not [" + std::to_string(m) + " x " +
                     std::to_string(m) + "]");
  }
  if (query >= m) {
    throw UsageError("export_temporal_attention: query " + std::to_string(query) + " outside [0, " +
                     std::to_string(m) + ")");
  }
  if (k > m) throw UsageError("export_temporal_attention: k=" + std::to_string(k) + " exceeds m=" + std::to_string(m));
  const double* row = map.data().data() + query * m;
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [row](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
  std::vector<RankedPosition> out;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t flat = order[i];
    out.push_back({flat, flat / (h * w), (flat % (h * w)) / w, flat % w, row[flat]});
  }
  return out;
}

std::vector<RankedPosition> export_temporal_attention(std::span<const AttentionMap> maps, std::size_t query,
                                                      std::size_t k, std::size_t n, std::size_t h, std::size_t w) {
  return export_temporal_attention(average_maps(maps), query, k, n, h, w);
}

Image upsample_nearest(const Image& img, std::size_t factor) {
  const auto f = static_cast<Eigen::Index>(factor);
  Image out(img.rows() * f, img.cols() * f);
  for (Eigen::Index y = 0; y < out.rows(); ++y) {
    for (Eigen::Index x = 0; x < out.cols(); ++x) out(y, x) = img(y / f, x / f);
  }
  return out;
}

Image attention_row_image(const Tensor& map, std::size_t query, std::size_t n, std::size_t h, std::size_t w) {
  const std::size_t m = n * h * w;
  if (map.rank() != 2 || map.shape()[0] != m) throw ShapeError("attention_row_image: map does not match n*h*w");
  if (query >= m) throw UsageError("attention_row_image: query out of range");
  const double* row = map.data().data() + query * m;
  Image out(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(n * w));
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        out(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(t * w + x)) = row[(t * h + y) * w + x];
      }
    }
  }
  const double peak = out.maxCoeff();
  if (peak > 0.0) out /= peak;
  return out;
}

void write_ranked_csv(const std::filesystem::path& path, std::size_t query, std::span<const RankedPosition> ranked) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out.precision(17);
  out << "query,rank,flat_index,frame,y,x,weight\n";
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& r = ranked[i];
    out << query << ',' << i + 1 << ',' << r.flat_index << ',' << r.frame << ',' << r.y << ',' << r.x << ','
        << r.weight << '\n';
  }
}

}  // namespace stam
