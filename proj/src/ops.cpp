#include "stam/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stam/errors.hpp"

namespace stam {

namespace {

using Index = Eigen::Index;

Index idx(std::size_t v) { return static_cast<Index>(v); }

// Layout of an elementwise pair: either identical shapes or `b` is a
// single-channel map broadcast over the channel axis of `a`.
struct PairLayout {
  bool broadcast = false;
  std::size_t outer = 1;
  std::size_t channels = 1;
  std::size_t plane = 1;
};

PairLayout pair_layout(const Tensor& a, const Tensor& b, const char* op) {
  PairLayout layout;
  if (a.shape() == b.shape()) return layout;
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool ok = sa.rank() >= 3 && sb.rank() == sa.rank() && sb.back(2) == 1;
  for (std::size_t i = 0; ok && i < sa.rank(); ++i) {
    if (i != sa.rank() - 3 && sa[i] != sb[i]) ok = false;
  }
  if (!ok) {
    throw ShapeError(std::string(op) + ": shapes " + sa.str() + " and " + sb.str() +
                     " are neither equal nor a single-channel broadcast");
  }
  layout.broadcast = true;
  layout.channels = sa.back(2);
  layout.plane = sa.back(1) * sa.back(0);
  layout.outer = sa.numel() / (layout.channels * layout.plane);
  return layout;
}

// Expands a single-channel map to the full channel count.
Vector expand_channels(const Vector& b, const PairLayout& l) {
  Vector out(idx(l.outer * l.channels * l.plane));
  for (std::size_t o = 0; o < l.outer; ++o) {
    auto src = b.segment(idx(o * l.plane), idx(l.plane));
    for (std::size_t c = 0; c < l.channels; ++c) {
      out.segment(idx((o * l.channels + c) * l.plane), idx(l.plane)) = src;
    }
  }
  return out;
}

// Sums a full-channel gradient down to the single-channel map.
Vector reduce_channels(const Vector& g, const PairLayout& l) {
  Vector out = Vector::Zero(idx(l.outer * l.plane));
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t c = 0; c < l.channels; ++c) {
      out.segment(idx(o * l.plane), idx(l.plane)) +=
          g.segment(idx((o * l.channels + c) * l.plane), idx(l.plane));
    }
  }
  return out;
}

// Splits a spatial tensor into (images, channels, height, width).
struct MapLayout {
  std::size_t images = 1;
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
};

MapLayout map_layout(const Tensor& t, const char* op) {
  const Shape& s = t.shape();
  if (s.rank() != 3 && s.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected [c x h x w] or [N x c x h x w], got " + s.str());
  }
  MapLayout l;
  l.images = s.rank() == 4 ? s[0] : 1;
  l.channels = s.back(2);
  l.height = s.back(1);
  l.width = s.back(0);
  return l;
}

Shape with_channels(const Shape& s, std::size_t channels) {
  std::vector<std::size_t> dims = s.dims();
  dims[dims.size() - 3] = channels;
  return Shape(std::move(dims));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const PairLayout l = pair_layout(a, b, "add");
  Vector out = l.broadcast ? Vector(a.data() + expand_channels(b.data(), l)) : Vector(a.data() + b.data());
  const Tensor inputs[] = {a, b};
  return make_result(a.shape(), std::move(out), inputs, [a, b, l](const Tensor&) {
    return [a, b, l](const Vector& g) {
      accumulate_grad(a, g);
      accumulate_grad(b, l.broadcast ? reduce_channels(g, l) : g);
    };
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const PairLayout l = pair_layout(a, b, "sub");
  Vector out = l.broadcast ? Vector(a.data() - expand_channels(b.data(), l)) : Vector(a.data() - b.data());
  const Tensor inputs[] = {a, b};
  return make_result(a.shape(), std::move(out), inputs, [a, b, l](const Tensor&) {
    return [a, b, l](const Vector& g) {
      accumulate_grad(a, g);
      accumulate_grad(b, l.broadcast ? Vector(-reduce_channels(g, l)) : Vector(-g));
    };
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const PairLayout l = pair_layout(a, b, "mul");
  Vector b_full = l.broadcast ? expand_channels(b.data(), l) : b.data();
  Vector out = a.data().cwiseProduct(b_full);
  const Tensor inputs[] = {a, b};
  return make_result(a.shape(), std::move(out), inputs, [a, b, l, b_full](const Tensor&) {
    return [a, b, l, b_full](const Vector& g) {
      if (a.requires_grad()) accumulate_grad(a, g.cwiseProduct(b_full));
      if (b.requires_grad()) {
        Vector gb = g.cwiseProduct(a.data());
        accumulate_grad(b, l.broadcast ? reduce_channels(gb, l) : gb);
      }
    };
  });
}

Tensor scale(const Tensor& a, double s) {
  const Tensor inputs[] = {a};
  return make_result(a.shape(), a.data() * s, inputs, [a, s](const Tensor&) {
    return [a, s](const Vector& g) { accumulate_grad(a, g * s); };
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + a.shape().str() + " and " + b.shape().str());
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], p = b.shape()[1];
  Vector out(idx(m * p));
  MapRM(out.data(), idx(m), idx(p)).noalias() =
      ConstMapRM(a.data().data(), idx(m), idx(k)) * ConstMapRM(b.data().data(), idx(k), idx(p));
  const Tensor inputs[] = {a, b};
  return make_result(Shape{m, p}, std::move(out), inputs, [a, b, m, k, p](const Tensor&) {
    return [a, b, m, k, p](const Vector& g) {
      ConstMapRM gm(g.data(), idx(m), idx(p));
      if (a.requires_grad()) {
        Vector ga(idx(m * k));
        MapRM(ga.data(), idx(m), idx(k)).noalias() =
            gm * ConstMapRM(b.data().data(), idx(k), idx(p)).transpose();
        accumulate_grad(a, ga);
      }
      if (b.requires_grad()) {
        Vector gb(idx(k * p));
        MapRM(gb.data(), idx(k), idx(p)).noalias() =
            ConstMapRM(a.data().data(), idx(m), idx(k)).transpose() * gm;
        accumulate_grad(b, gb);
      }
    };
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected a 2-D tensor, got " + a.shape().str());
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Vector out(idx(r * c));
  MapRM(out.data(), idx(c), idx(r)) = ConstMapRM(a.data().data(), idx(r), idx(c)).transpose();
  const Tensor inputs[] = {a};
  return make_result(Shape{c, r}, std::move(out), inputs, [a, r, c](const Tensor&) {
    return [a, r, c](const Vector& g) {
      Vector ga(idx(r * c));
      MapRM(ga.data(), idx(r), idx(c)) = ConstMapRM(g.data(), idx(c), idx(r)).transpose();
      accumulate_grad(a, ga);
    };
  });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Padding padding) {
  const MapLayout in = map_layout(input, "conv2d");
  if (kernel.rank() != 4 || kernel.shape()[2] != kernel.shape()[3]) {
    throw ShapeError("conv2d: kernel must be [cout x cin x k x k], got " + kernel.shape().str());
  }
  const std::size_t cout = kernel.shape()[0];
  const std::size_t cin = kernel.shape()[1];
  const std::size_t k = kernel.shape()[2];
  if (cin != in.channels) {
    throw ShapeError("conv2d: input " + input.shape().str() + " has " + std::to_string(in.channels) +
                     " channels but kernel " + kernel.shape().str() + " expects " + std::to_string(cin));
  }
  if (bias.rank() != 1 || bias.shape()[0] != cout) {
    throw ShapeError("conv2d: bias " + bias.shape().str() + " does not match " +
                     std::to_string(cout) + " output channels");
  }
  std::size_t pad = 0;
  if (padding == Padding::same) {
    if (k % 2 == 0) throw ConfigError("conv2d: same padding needs an odd kernel, got k=" + std::to_string(k));
    pad = (k - 1) / 2;
  } else if (k > in.height || k > in.width) {
    throw ShapeError("conv2d: kernel " + kernel.shape().str() + " larger than input " + input.shape().str());
  }
  const std::size_t oh = padding == Padding::same ? in.height : in.height - k + 1;
  const std::size_t ow = padding == Padding::same ? in.width : in.width - k + 1;
  const std::size_t opix = oh * ow;
  const std::size_t rows = cin * k * k;
  const std::size_t cols = in.images * opix;

  // im2col: column = image * opix + oy * ow + ox, row = (ci * k + ky) * k + kx.
  auto patches = std::make_shared<MatrixRM>(MatrixRM::Zero(idx(rows), idx(cols)));
  const double* src = input.data().data();
  for (std::size_t ci = 0; ci < cin; ++ci) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = patches->row(idx((ci * k + ky) * k + kx)).data();
        for (std::size_t n = 0; n < in.images; ++n) {
          const double* plane = src + (n * cin + ci) * in.height * in.width;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long iy = static_cast<long>(oy + ky) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(in.height)) continue;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long ix = static_cast<long>(ox + kx) - static_cast<long>(pad);
              if (ix < 0 || ix >= static_cast<long>(in.width)) continue;
              row[n * opix + oy * ow + ox] = plane[iy * static_cast<long>(in.width) + ix];
            }
          }
        }
      }
    }
  }
  ConstMapRM kmat(kernel.data().data(), idx(cout), idx(rows));
  MatrixRM result = kmat * *patches;
  result.colwise() += bias.data();

  Vector out(idx(in.images * cout * opix));
  for (std::size_t n = 0; n < in.images; ++n) {
    for (std::size_t co = 0; co < cout; ++co) {
      out.segment(idx((n * cout + co) * opix), idx(opix)) =
          result.row(idx(co)).segment(idx(n * opix), idx(opix)).transpose();
    }
  }

  Shape out_shape = input.rank() == 4 ? Shape{in.images, cout, oh, ow} : Shape{cout, oh, ow};
  const Tensor inputs[] = {input, kernel, bias};
  return make_result(std::move(out_shape), std::move(out), inputs,
                     [=](const Tensor&) {
    return [=](const Vector& g) {
      MatrixRM gm(idx(cout), idx(cols));
      for (std::size_t n = 0; n < in.images; ++n) {
        for (std::size_t co = 0; co < cout; ++co) {
          gm.row(idx(co)).segment(idx(n * opix), idx(opix)) =
              g.segment(idx((n * cout + co) * opix), idx(opix)).transpose();
        }
      }
      if (bias.requires_grad()) accumulate_grad(bias, gm.rowwise().sum());
      if (kernel.requires_grad()) {
        Vector gk(idx(cout * rows));
        MapRM(gk.data(), idx(cout), idx(rows)).noalias() = gm * patches->transpose();
        accumulate_grad(kernel, gk);
      }
      if (input.requires_grad()) {
        MatrixRM gpatch = ConstMapRM(kernel.data().data(), idx(cout), idx(rows)).transpose() * gm;
        Vector gi = Vector::Zero(input.data().size());
        for (std::size_t ci = 0; ci < cin; ++ci) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              const double* row = gpatch.row(idx((ci * k + ky) * k + kx)).data();
              for (std::size_t n = 0; n < in.images; ++n) {
                double* plane = gi.data() + (n * cin + ci) * in.height * in.width;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                  const long iy = static_cast<long>(oy + ky) - static_cast<long>(pad);
                  if (iy < 0 || iy >= static_cast<long>(in.height)) continue;
                  for (std::size_t ox = 0; ox < ow; ++ox) {
                    const long ix = static_cast<long>(ox + kx) - static_cast<long>(pad);
                    if (ix < 0 || ix >= static_cast<long>(in.width)) continue;
                    plane[iy * static_cast<long>(in.width) + ix] += row[n * opix + oy * ow + ox];
                  }
                }
              }
            }
          }
        }
        accumulate_grad(input, gi);
      }
    };
  });
}

Tensor channel_max_pool(const Tensor& f) {
  const MapLayout l = map_layout(f, "channel_max_pool");
  const std::size_t plane = l.height * l.width;
  Vector out(idx(l.images * plane));
  std::vector<std::size_t> argmax(l.images * plane);
  const double* src = f.data().data();
  for (std::size_t n = 0; n < l.images; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      std::size_t best = 0;
      double best_v = src[n * l.channels * plane + p];
      for (std::size_t c = 1; c < l.channels; ++c) {
        const double v = src[(n * l.channels + c) * plane + p];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      out[idx(n * plane + p)] = best_v;
      argmax[n * plane + p] = (n * l.channels + best) * plane + p;
    }
  }
  const Tensor inputs[] = {f};
  return make_result(with_channels(f.shape(), 1), std::move(out), inputs,
                     [f, argmax = std::move(argmax)](const Tensor&) {
    return [f, argmax](const Vector& g) {
      Vector gf = Vector::Zero(f.data().size());
      for (std::size_t i = 0; i < argmax.size(); ++i) gf[idx(argmax[i])] += g[idx(i)];
      accumulate_grad(f, gf);
    };
  });
}

Tensor channel_avg_pool(const Tensor& f) {
  const MapLayout l = map_layout(f, "channel_avg_pool");
  const std::size_t plane = l.height * l.width;
  Vector out = Vector::Zero(idx(l.images * plane));
  for (std::size_t n = 0; n < l.images; ++n) {
    for (std::size_t c = 0; c < l.channels; ++c) {
      out.segment(idx(n * plane), idx(plane)) += f.data().segment(idx((n * l.channels + c) * plane), idx(plane));
    }
  }
  out /= static_cast<double>(l.channels);
  const Tensor inputs[] = {f};
  return make_result(with_channels(f.shape(), 1), std::move(out), inputs, [f, l, plane](const Tensor&) {
    return [f, l, plane](const Vector& g) {
      Vector gf(f.data().size());
      const double inv = 1.0 / static_cast<double>(l.channels);
      for (std::size_t n = 0; n < l.images; ++n) {
        for (std::size_t c = 0; c < l.channels; ++c) {
          gf.segment(idx((n * l.channels + c) * plane), idx(plane)) = g.segment(idx(n * plane), idx(plane)) * inv;
        }
      }
      accumulate_grad(f, gf);
    };
  });
}

Tensor avg_pool2x2(const Tensor& f) {
  const Shape& s = f.shape();
  if (s.rank() < 2) throw ShapeError("avg_pool2x2: expected at least 2 dims, got " + s.str());
  const std::size_t h = s.back(1), w = s.back(0);
  if (h % 2 != 0 || w % 2 != 0) throw ShapeError("avg_pool2x2: spatial dims of " + s.str() + " must be even");
  const std::size_t planes = s.numel() / (h * w);
  const std::size_t oh = h / 2, ow = w / 2;
  Vector out(idx(planes * oh * ow));
  const double* src = f.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* in = src + p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const double* a = in + (2 * y) * w + 2 * x;
        out[idx((p * oh + y) * ow + x)] = 0.25 * (a[0] + a[1] + a[w] + a[w + 1]);
      }
    }
  }
  std::vector<std::size_t> dims = s.dims();
  dims[dims.size() - 2] = oh;
  dims[dims.size() - 1] = ow;
  const Tensor inputs[] = {f};
  return make_result(Shape(std::move(dims)), std::move(out), inputs, [=](const Tensor&) {
    return [=](const Vector& g) {
      Vector gf(f.data().size());
      for (std::size_t p = 0; p < planes; ++p) {
        double* in = gf.data() + p * h * w;
        for (std::size_t y = 0; y < oh; ++y) {
          for (std::size_t x = 0; x < ow; ++x) {
            const double v = 0.25 * g[idx((p * oh + y) * ow + x)];
            double* a = in + (2 * y) * w + 2 * x;
            a[0] = v;
            a[1] = v;
            a[w] = v;
            a[w + 1] = v;
          }
        }
      }
      accumulate_grad(f, gf);
    };
  });
}

Tensor sigmoid(const Tensor& x) {
  Vector out = x.data().unaryExpr([](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  const Tensor inputs[] = {x};
  return make_result(x.shape(), std::move(out), inputs, [x](const Tensor& y) {
    return [x, y](const Vector& g) {
      const Vector& s = y.data();
      accumulate_grad(x, g.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
    };
  });
}

Tensor relu(const Tensor& x) {
  Vector out = x.data().cwiseMax(0.0);
  const Tensor inputs[] = {x};
  return make_result(x.shape(), std::move(out), inputs, [x](const Tensor&) {
    return [x](const Vector& g) {
      accumulate_grad(x, (x.data().array() > 0.0).select(g, 0.0));
    };
  });
}

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("softmax_rows: expected a 2-D tensor, got " + x.shape().str());
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  Vector out(idx(r * c));
  ConstMapRM in(x.data().data(), idx(r), idx(c));
  MapRM y(out.data(), idx(r), idx(c));
  for (Index i = 0; i < idx(r); ++i) {
    const double m = in.row(i).maxCoeff();
    y.row(i) = (in.row(i).array() - m).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  const Tensor inputs[] = {x};
  return make_result(x.shape(), std::move(out), inputs, [x, r, c](const Tensor& result) {
    return [x, r, c, result](const Vector& g) {
      ConstMapRM yy(result.data().data(), idx(r), idx(c));
      ConstMapRM gg(g.data(), idx(r), idx(c));
      Vector gx(idx(r * c));
      MapRM gm(gx.data(), idx(r), idx(c));
      for (Index i = 0; i < idx(r); ++i) {
        const double dot = gg.row(i).dot(yy.row(i));
        gm.row(i) = yy.row(i).cwiseProduct((gg.row(i).array() - dot).matrix());
      }
      accumulate_grad(x, gx);
    };
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  std::size_t batch = 0, classes = 0;
  if (logits.rank() == 1) {
    batch = 1;
    classes = logits.shape()[0];
  } else if (logits.rank() == 2) {
    batch = logits.shape()[0];
    classes = logits.shape()[1];
  } else {
    throw ShapeError("cross_entropy: logits must be [K] or [B x K], got " + logits.shape().str());
  }
  if (labels.size() != batch) {
    throw UsageError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(batch));
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw UsageError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
  }
  ConstMapRM z(logits.data().data(), idx(batch), idx(classes));
  MatrixRM probs(idx(batch), idx(classes));
  double total = 0.0;
  for (Index b = 0; b < idx(batch); ++b) {
    Index top = 0;
    const double m = z.row(b).maxCoeff(&top);
    probs.row(b) = (z.row(b).array() - m).exp().matrix();
    // log1p over the non-maximal terms keeps confident losses accurate
    double rest = 0.0;
    for (Index k = 0; k < idx(classes); ++k) {
      if (k != top) rest += probs(b, k);
    }
    probs.row(b) /= 1.0 + rest;
    total += (m - z(b, labels[static_cast<std::size_t>(b)])) + std::log1p(rest);
  }
  std::vector<int> owned(labels.begin(), labels.end());
  const Tensor inputs[] = {logits};
  return make_result(Shape{1}, Vector::Constant(1, total / static_cast<double>(batch)), inputs,
                     [logits, probs, owned, batch](const Tensor&) {
    return [logits, probs, owned, batch](const Vector& g) {
      MatrixRM grad = probs;
      for (std::size_t b = 0; b < batch; ++b) grad(idx(b), owned[b]) -= 1.0;
      grad *= g[0] / static_cast<double>(batch);
      accumulate_grad(logits, Eigen::Map<const Vector>(grad.data(), grad.size()));
    };
  });
}

Tensor sum(const Tensor& x) {
  const Tensor inputs[] = {x};
  return make_result(Shape{1}, Vector::Constant(1, x.data().sum()), inputs, [x](const Tensor&) {
    return [x](const Vector& g) { accumulate_grad(x, Vector::Constant(x.data().size(), g[0])); };
  });
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape.numel() != x.numel()) {
    throw ShapeError("reshape: cannot view " + x.shape().str() + " as " + shape.str());
  }
  const Tensor inputs[] = {x};
  return make_result(std::move(shape), x.data(), inputs, [x](const Tensor&) {
    return [x](const Vector& g) { accumulate_grad(x, g); };
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no tensors given");
  const Shape& first = parts.front().shape();
  if (axis >= first.rank()) throw ShapeError("concat: axis out of range for " + first.str());
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.rank() == first.rank();
    for (std::size_t i = 0; ok && i < s.rank(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw ShapeError("concat: shape " + s.str() + " incompatible with " + first.str());
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.rank(); ++i) inner *= first[i];

  std::vector<std::size_t> dims = first.dims();
  dims[axis] = total;
  Vector out(idx(outer * total * inner));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t chunk = p.shape()[axis] * inner;
    offsets.push_back(offset);
    for (std::size_t o = 0; o < outer; ++o) {
      out.segment(idx(o * total * inner + offset), idx(chunk)) = p.data().segment(idx(o * chunk), idx(chunk));
    }
    offset += chunk;
  }
  std::vector<Tensor> owned(parts.begin(), parts.end());
  return make_result(Shape(std::move(dims)), std::move(out), parts,
                     [owned, offsets, outer, total, inner, axis](const Tensor&) {
    return [owned, offsets, outer, total, inner, axis](const Vector& g) {
      for (std::size_t i = 0; i < owned.size(); ++i) {
        if (!owned[i].requires_grad()) continue;
        const std::size_t chunk = owned[i].shape()[axis] * inner;
        Vector gp(idx(outer * chunk));
        for (std::size_t o = 0; o < outer; ++o) {
          gp.segment(idx(o * chunk), idx(chunk)) = g.segment(idx(o * total * inner + offsets[i]), idx(chunk));
        }
        accumulate_grad(owned[i], gp);
      }
    };
  });
}

Tensor slice(const Tensor& x, std::size_t begin, std::size_t count) {
  const Shape& s = x.shape();
  if (count == 0 || begin + count > s[0]) {
    throw UsageError("slice: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + s.str());
  }
  const std::size_t row = s.numel() / s[0];
  std::vector<std::size_t> dims = s.dims();
  dims[0] = count;
  const Tensor inputs[] = {x};
  return make_result(Shape(std::move(dims)), x.data().segment(idx(begin * row), idx(count * row)), inputs,
                     [x, begin, row](const Tensor&) {
    return [x, begin, row](const Vector& g) {
      Vector gx = Vector::Zero(x.data().size());
      gx.segment(idx(begin * row), g.size()) = g;
      accumulate_grad(x, gx);
    };
  });
}

Tensor flatten_positions(const Tensor& x) {
  const MapLayout l = map_layout(x, "flatten_positions");
  const std::size_t plane = l.height * l.width;
  const std::size_t c = l.channels;
  Vector out(x.data().size());
  for (std::size_t n = 0; n < l.images; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t p = 0; p < plane; ++p) {
        out[idx((n * plane + p) * c + ch)] = x.data()[idx((n * c + ch) * plane + p)];
      }
    }
  }
  const Tensor inputs[] = {x};
  return make_result(Shape{l.images * plane, c}, std::move(out), inputs, [x, l, plane, c](const Tensor&) {
    return [x, l, plane, c](const Vector& g) {
      Vector gx(g.size());
      for (std::size_t n = 0; n < l.images; ++n) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t p = 0; p < plane; ++p) {
            gx[idx((n * c + ch) * plane + p)] = g[idx((n * plane + p) * c + ch)];
          }
        }
      }
      accumulate_grad(x, gx);
    };
  });
}

Tensor unflatten_positions(const Tensor& x, std::size_t n, std::size_t h, std::size_t w) {
  if (x.rank() != 2 || x.shape()[0] != n * h * w) {
    throw ShapeError("unflatten_positions: " + x.shape().str() + " is not [" + std::to_string(n * h * w) +
                     " x c]");
  }
  const std::size_t c = x.shape()[1];
  const std::size_t plane = h * w;
  Vector out(x.data().size());
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t p = 0; p < plane; ++p) {
        out[idx((t * c + ch) * plane + p)] = x.data()[idx((t * plane + p) * c + ch)];
      }
    }
  }
  const Tensor inputs[] = {x};
  return make_result(Shape{n, c, h, w}, std::move(out), inputs, [x, n, c, plane](const Tensor&) {
    return [x, n, c, plane](const Vector& g) {
      Vector gx(g.size());
      for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t p = 0; p < plane; ++p) {
            gx[idx((t * plane + p) * c + ch)] = g[idx((t * c + ch) * plane + p)];
          }
        }
      }
      accumulate_grad(x, gx);
    };
  });
}

Tensor spatial_mean(const Tensor& x) {
  const MapLayout l = map_layout(x, "spatial_mean");
  const std::size_t plane = l.height * l.width;
  const std::size_t rows = l.images * l.channels;
  Vector out = ConstMapRM(x.data().data(), idx(rows), idx(plane)).rowwise().mean();
  Shape shape = x.rank() == 4 ? Shape{l.images, l.channels} : Shape{l.channels};
  const Tensor inputs[] = {x};
  return make_result(std::move(shape), std::move(out), inputs, [x, rows, plane](const Tensor&) {
    return [x, rows, plane](const Vector& g) {
      Vector gx(idx(rows * plane));
      const double inv = 1.0 / static_cast<double>(plane);
      for (std::size_t r = 0; r < rows; ++r) gx.segment(idx(r * plane), idx(plane)).setConstant(g[idx(r)] * inv);
      accumulate_grad(x, gx);
    };
  });
}

Tensor group_mean_rows(const Tensor& x, std::size_t group) {
  if (x.rank() != 2 || group == 0 || x.shape()[0] % group != 0) {
    throw ShapeError("group_mean_rows: cannot split " + x.shape().str() + " into groups of " +
                     std::to_string(group));
  }
  const std::size_t groups = x.shape()[0] / group;
  const std::size_t c = x.shape()[1];
  Vector out = Vector::Zero(idx(groups * c));
  for (std::size_t gi = 0; gi < groups; ++gi) {
    for (std::size_t r = 0; r < group; ++r) {
      out.segment(idx(gi * c), idx(c)) += x.data().segment(idx((gi * group + r) * c), idx(c));
    }
  }
  out /= static_cast<double>(group);
  const Tensor inputs[] = {x};
  return make_result(Shape{groups, c}, std::move(out), inputs, [x, groups, group, c](const Tensor&) {
    return [x, groups, group, c](const Vector& g) {
      Vector gx(x.data().size());
      const double inv = 1.0 / static_cast<double>(group);
      for (std::size_t gi = 0; gi < groups; ++gi) {
        for (std::size_t r = 0; r < group; ++r) {
          gx.segment(idx((gi * group + r) * c), idx(c)) = g.segment(idx(gi * c), idx(c)) * inv;
        }
      }
      accumulate_grad(x, gx);
    };
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || bias.shape()[0] != x.shape()[1]) {
    throw ShapeError("add_bias: cannot add " + bias.shape().str() + " to rows of " + x.shape().str());
  }
  const std::size_t r = x.shape()[0], k = x.shape()[1];
  Vector out(x.data().size());
  MapRM(out.data(), idx(r), idx(k)) =
      ConstMapRM(x.data().data(), idx(r), idx(k)).rowwise() + bias.data().transpose();
  const Tensor inputs[] = {x, bias};
  return make_result(x.shape(), std::move(out), inputs, [x, bias, r, k](const Tensor&) {
    return [x, bias, r, k](const Vector& g) {
      accumulate_grad(x, g);
      if (bias.requires_grad()) accumulate_grad(bias, ConstMapRM(g.data(), idx(r), idx(k)).colwise().sum().transpose());
    };
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_bias(matmul(x, transpose(weight)), bias);
}

}  // namespace stam
