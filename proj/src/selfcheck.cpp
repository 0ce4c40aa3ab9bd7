#include "stam/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>

#include "stam/attention.hpp"
#include "stam/gradcheck.hpp"
#include "stam/model.hpp"
#include "stam/ops.hpp"
#include "stam/random.hpp"
#include "stam/train.hpp"

namespace stam {

namespace {

constexpr double kLinearTol = 1e-6;
constexpr double kSmoothTol = 1e-4;

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

struct Instance {
  std::vector<Tensor> inputs;
  Fn f;
};

struct GradCase {
  std::string name;
  double tolerance;
  std::function<Instance(Rng&)> make;
};

std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

Tensor rand_t(Shape s, Rng& rng, double scale = 1.0) { return uniform_tensor(std::move(s), -scale, scale, rng); }

// Keeps every entry at least `margin` away from zero (relu kink).
Tensor rand_away_from_zero(Shape s, Rng& rng, double margin = 0.05) {
  Tensor t = rand_t(std::move(s), rng);
  for (auto& v : t.mutable_data()) {
    if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
  }
  return t;
}

// Channel maps whose per-position maximum is separated from the runner-up.
Tensor rand_distinct_channels(std::size_t n, std::size_t c, std::size_t h, std::size_t w, Rng& rng) {
  Tensor t = rand_t(Shape{n, c, h, w}, rng);
  Vector& d = t.mutable_data();
  const std::size_t plane = h * w;
  for (std::size_t img = 0; img < n; ++img) {
    for (std::size_t p = 0; p < plane; ++p) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        // Spread channels onto a grid of step 0.1 plus small jitter.
        const auto i = static_cast<Eigen::Index>((img * c + ch) * plane + p);
        d[i] = std::round(d[i] * 10.0) / 10.0 + 0.01 * static_cast<double>(ch) + 0.001 * rng.uniform();
      }
    }
  }
  return t;
}

Model tiny_stam(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.variant = Variant::stam;
  cfg.input_h = 8;
  cfg.input_w = 8;
  cfg.backbone_channels = {3, 3};
  cfg.heads = 2;
  cfg.num_classes = 3;
  cfg.seed = seed;
  return Model::build(cfg);
}

std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;
  auto unary = [](std::function<Tensor(const Tensor&)> op) {
    return [op](const std::vector<Tensor>& in) { return op(in[0]); };
  };
  auto binary = [](std::function<Tensor(const Tensor&, const Tensor&)> op) {
    return [op](const std::vector<Tensor>& in) { return op(in[0], in[1]); };
  };

  cases.push_back({"add", kLinearTol, [=](Rng& r) {
    Shape s{dim(r, 1, 4), dim(r, 1, 4)};
    return Instance{{rand_t(s, r), rand_t(s, r)}, binary(add)};
  }});
  cases.push_back({"sub", kLinearTol, [=](Rng& r) {
    Shape s{dim(r, 1, 4), dim(r, 1, 4)};
    return Instance{{rand_t(s, r), rand_t(s, r)}, binary(sub)};
  }});
  cases.push_back({"mul_elementwise", kLinearTol, [=](Rng& r) {
    Shape s{dim(r, 1, 4), dim(r, 1, 4)};
    return Instance{{rand_t(s, r), rand_t(s, r)}, binary(mul)};
  }});
  cases.push_back({"mul_channel_broadcast", kLinearTol, [=](Rng& r) {
    const std::size_t n = dim(r, 1, 3), c = dim(r, 2, 4), h = dim(r, 1, 4), w = dim(r, 1, 4);
    return Instance{{rand_t(Shape{n, c, h, w}, r), rand_t(Shape{n, 1, h, w}, r)}, binary(mul)};
  }});
  cases.push_back({"add_channel_broadcast", kLinearTol, [=](Rng& r) {
    const std::size_t c = dim(r, 2, 4), h = dim(r, 1, 4), w = dim(r, 1, 4);
    return Instance{{rand_t(Shape{c, h, w}, r), rand_t(Shape{1, h, w}, r)}, binary(add)};
  }});
  cases.push_back({"scalar_mul", kLinearTol, [=](Rng& r) {
    const double s = r.uniform(-2.0, 2.0);
    return Instance{{rand_t(Shape{dim(r, 1, 6)}, r)}, unary([s](const Tensor& x) { return scale(x, s); })};
  }});
  cases.push_back({"matmul", kLinearTol, [=](Rng& r) {
    const std::size_t m = dim(r, 1, 4), k = dim(r, 1, 4), p = dim(r, 1, 4);
    return Instance{{rand_t(Shape{m, k}, r), rand_t(Shape{k, p}, r)}, binary(matmul)};
  }});
  cases.push_back({"transpose", kLinearTol, [=](Rng& r) {
    return Instance{{rand_t(Shape{dim(r, 1, 4), dim(r, 1, 4)}, r)}, unary(transpose)};
  }});
  cases.push_back({"conv2d_same", kLinearTol, [=](Rng& r) {
    const std::size_t cin = dim(r, 1, 3), cout = dim(r, 1, 3), k = 2 * dim(r, 0, 2) + 1;
    const std::size_t h = dim(r, 2, 6), w = dim(r, 2, 6);
    Tensor input = r.below(2) ? rand_t(Shape{dim(r, 1, 2), cin, h, w}, r) : rand_t(Shape{cin, h, w}, r);
    return Instance{{input, rand_t(Shape{cout, cin, k, k}, r), rand_t(Shape{cout}, r)},
                    [](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2], Padding::same); }};
  }});
  cases.push_back({"conv2d_valid", kLinearTol, [=](Rng& r) {
    const std::size_t cin = dim(r, 1, 3), cout = dim(r, 1, 3), k = dim(r, 1, 3);
    const std::size_t h = dim(r, 3, 6), w = dim(r, 3, 6);
    return Instance{{rand_t(Shape{cin, h, w}, r), rand_t(Shape{cout, cin, k, k}, r), rand_t(Shape{cout}, r)},
                    [](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2], Padding::valid); }};
  }});
  cases.push_back({"channel_max_pool", kLinearTol, [=](Rng& r) {
    return Instance{{rand_distinct_channels(dim(r, 1, 2), dim(r, 1, 4), dim(r, 1, 4), dim(r, 1, 4), r)},
                    unary(channel_max_pool)};
  }});
  cases.push_back({"channel_avg_pool", kLinearTol, [=](Rng& r) {
    return Instance{{rand_t(Shape{dim(r, 1, 4), dim(r, 1, 4), dim(r, 1, 4)}, r)}, unary(channel_avg_pool)};
  }});
  cases.push_back({"avg_pool2x2", kLinearTol, [=](Rng& r) {
    return Instance{{rand_t(Shape{dim(r, 1, 3), 2 * dim(r, 1, 3), 2 * dim(r, 1, 3)}, r)}, unary(avg_pool2x2)};
  }});
  cases.push_back({"sigmoid", kSmoothTol, [=](Rng& r) {
    return Instance{{uniform_tensor(Shape{dim(r, 1, 8)}, -4.0, 4.0, r)}, unary(sigmoid)};
  }});
  cases.push_back({"relu", kLinearTol, [=](Rng& r) {
    return Instance{{rand_away_from_zero(Shape{dim(r, 1, 8)}, r)}, unary(relu)};
  }});
  cases.push_back({"softmax_rows", kSmoothTol, [=](Rng& r) {
    return Instance{{uniform_tensor(Shape{dim(r, 1, 4), dim(r, 1, 5)}, -3.0, 3.0, r)}, unary(softmax_rows)};
  }});
  cases.push_back({"cross_entropy", kSmoothTol, [=](Rng& r) {
    const std::size_t b = dim(r, 1, 4), k = dim(r, 2, 5);
    std::vector<int> labels;
    for (std::size_t i = 0; i < b; ++i) labels.push_back(static_cast<int>(r.below(k)));
    return Instance{{uniform_tensor(Shape{b, k}, -3.0, 3.0, r)}, [labels](const std::vector<Tensor>& in) {
                      return cross_entropy(in[0], std::span<const int>(labels));
                    }};
  }});
  cases.push_back({"sum_mean", kLinearTol, [=](Rng& r) {
    return Instance{{rand_t(Shape{dim(r, 1, 4), dim(r, 1, 4)}, r)},
                    unary([](const Tensor& x) { return add(sum(x), mean(x)); })};
  }});
  cases.push_back({"reshape_concat_slice", kLinearTol, [=](Rng& r) {
    const std::size_t a = dim(r, 1, 3), b = dim(r, 1, 3), c = dim(r, 1, 3), d = dim(r, 1, 3);
    const std::size_t axis = r.below(2);
    Shape s1 = axis == 0 ? Shape{a, c, d} : Shape{c, a, d};
    Shape s2 = axis == 0 ? Shape{b, c, d} : Shape{c, b, d};
    return Instance{{rand_t(s1, r), rand_t(s2, r)}, [axis](const std::vector<Tensor>& in) {
                      const Tensor parts[] = {in[0], in[1]};
                      Tensor cat = concat(parts, axis);
                      Tensor flat = reshape(cat, Shape{cat.numel()});
                      return slice(flat, 1, flat.numel() - 1);
                    }};
  }});
  cases.push_back({"flatten_positions", kLinearTol, [=](Rng& r) {
    const std::size_t n = dim(r, 1, 3), c = dim(r, 1, 3), h = dim(r, 1, 3), w = dim(r, 1, 3);
    return Instance{{rand_t(Shape{n, c, h, w}, r)}, [n, h, w](const std::vector<Tensor>& in) {
                      return unflatten_positions(flatten_positions(in[0]) * flatten_positions(in[0]), n, h, w);
                    }};
  }});
  cases.push_back({"spatial_and_group_mean", kLinearTol, [=](Rng& r) {
    const std::size_t g = dim(r, 1, 3), groups = dim(r, 1, 3);
    return Instance{{rand_t(Shape{g * groups, dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3)}, r)},
                    [g](const std::vector<Tensor>& in) { return group_mean_rows(spatial_mean(in[0]), g); }};
  }});
  cases.push_back({"linear", kLinearTol, [=](Rng& r) {
    const std::size_t rows = dim(r, 1, 3), d = dim(r, 1, 4), k = dim(r, 1, 4);
    return Instance{{rand_t(Shape{rows, d}, r), rand_t(Shape{k, d}, r), rand_t(Shape{k}, r)},
                    [](const std::vector<Tensor>& in) { return linear(in[0], in[1], in[2]); }};
  }});
  cases.push_back({"spatial_attention", kSmoothTol, [=](Rng& r) {
    const std::size_t c = dim(r, 1, 3), h = dim(r, 2, 5), w = dim(r, 2, 5);
    Tensor f = rand_distinct_channels(1, c, h, w, r);
    Tensor f3 = Tensor(Shape{c, h, w}, f.data());
    Rng init(r.next());
    SpatialAttentionParams p = SpatialAttentionParams::init(init);
    return Instance{{f3, p.kernel.detach(), rand_t(Shape{1}, r, 0.5)}, [](const std::vector<Tensor>& in) {
                      SpatialAttentionParams q{in[1], in[2]};
                      return apply_spatial(in[0], spatial_attention_map(in[0], q));
                    }};
  }});
  cases.push_back({"temporal_attention", kSmoothTol, [=](Rng& r) {
    const std::size_t m = dim(r, 1, 6), c = dim(r, 1, 4);
    return Instance{{rand_t(Shape{m, c}, r), rand_t(Shape{c, c}, r, 0.8), rand_t(Shape{c, c}, r, 0.8),
                     rand_t(Shape{c, c}, r, 0.8)},
                    [](const std::vector<Tensor>& in) {
                      return temporal_attention(in[0], TemporalAttentionHead{in[1], in[2], in[3]}).output;
                    }};
  }});
  cases.push_back({"multi_head_temporal", kSmoothTol, [=](Rng& r) {
    const std::size_t m = dim(r, 1, 5), c = dim(r, 1, 3);
    std::vector<Tensor> in{rand_t(Shape{m, c}, r)};
    for (int i = 0; i < 6; ++i) in.push_back(rand_t(Shape{c, c}, r, 0.8));
    return Instance{in, [](const std::vector<Tensor>& x) {
                      const TemporalAttentionHead heads[] = {{x[1], x[2], x[3]}, {x[4], x[5], x[6]}};
                      return multi_head_temporal(x[0], heads).output;
                    }};
  }});
  cases.push_back({"end_to_end_tiny_stam", kSmoothTol, [=](Rng& r) {
    Model model = tiny_stam(r.next());
    TactileSequence seq;
    for (int t = 0; t < 2; ++t) {
      Image frame(8, 8);
      for (auto& v : frame.reshaped()) v = r.uniform();
      seq.frames.push_back(frame);
    }
    const int label = static_cast<int>(r.below(3));
    std::vector<Tensor> params;
    for (const auto& p : model.parameters()) params.push_back(p.tensor.detach());
    return Instance{params, [model, seq, label](const std::vector<Tensor>& in) mutable {
                      model.set_parameters(in);
                      return cross_entropy(model.forward(seq), label);
                    }};
  }});
  return cases;
}

}  // namespace

std::vector<CheckOutcome> gradient_suite(std::size_t seeds) {
  std::vector<CheckOutcome> out;
  std::uint64_t case_id = 0;
  for (const auto& c : gradient_cases()) {
    ++case_id;
    CheckOutcome o{"gradient " + c.name, 0.0, c.tolerance, true, {}};
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(mix_seed(case_id, s));
      Instance inst = c.make(rng);
      const GradCheckResult r = check_gradients(inst.f, inst.inputs, 1e-5, mix_seed(case_id, s + 1000));
      if (r.max_rel_error > o.value) {
        o.value = r.max_rel_error;
        o.detail = "seed " + std::to_string(s) + " at " + r.worst;
      }
    }
    o.passed = o.value < o.tolerance;
    out.push_back(std::move(o));
  }
  return out;
}

std::vector<CheckOutcome> invariant_suite(std::size_t seeds) {
  std::vector<CheckOutcome> out;

  {
    CheckOutcome o{"softmax rows sum to 1, entries in [0,1]", 0.0, 1e-12, true, {}};
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(mix_seed(101, s));
      const double spread = s % 2 ? 1000.0 : 5.0;
      Tensor y = softmax_rows(uniform_tensor(Shape{dim(rng, 1, 6), dim(rng, 1, 6)}, -spread, spread, rng));
      ConstMapRM m(y.data().data(), static_cast<Eigen::Index>(y.shape()[0]), static_cast<Eigen::Index>(y.shape()[1]));
      for (Eigen::Index i = 0; i < m.rows(); ++i) o.value = std::max(o.value, std::abs(m.row(i).sum() - 1.0));
      if (m.minCoeff() < 0.0 || m.maxCoeff() > 1.0) o.passed = false;
    }
    o.passed = o.passed && o.value <= o.tolerance;
    out.push_back(o);
  }
  {
    CheckOutcome o{"temporal map: sum_i A[j,i] = 1", 0.0, 1e-9, true, {}};
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(mix_seed(102, s));
      const std::size_t m = dim(rng, 1, 12), c = dim(rng, 1, 6);
      Tensor fsn = rand_t(Shape{m, c}, rng, 2.0);
      TemporalAttentionHead head = TemporalAttentionHead::init(c, rng);
      const Tensor a = temporal_attention(fsn, head).map.weights;
      ConstMapRM am(a.data().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
      for (Eigen::Index j = 0; j < am.rows(); ++j) o.value = std::max(o.value, std::abs(am.row(j).sum() - 1.0));
      if (am.minCoeff() < 0.0 || am.maxCoeff() > 1.0) o.passed = false;
    }
    o.passed = o.passed && o.value <= o.tolerance;
    out.push_back(o);
  }
  {
    CheckOutcome o{"spatial gate strictly inside (0,1)", 0.0, 0.0, true, {}};
    double lo = 1.0, hi = 0.0;
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(mix_seed(103, s));
      Tensor f = rand_t(Shape{dim(rng, 1, 3), dim(rng, 1, 5), dim(rng, 1, 8), dim(rng, 1, 8)}, rng, 3.0);
      SpatialAttentionParams p = SpatialAttentionParams::init(rng);
      const Tensor gate = spatial_attention_map(f, p).weights;
      const Vector& g = gate.data();
      lo = std::min(lo, g.minCoeff());
      hi = std::max(hi, g.maxCoeff());
    }
    o.passed = lo > 0.0 && hi < 1.0;
    o.value = std::min(lo, 1.0 - hi);
    o.detail = "min " + std::to_string(lo) + ", max " + std::to_string(hi);
    out.push_back(o);
  }
  {
    CheckOutcome o{"conv2d same padding preserves spatial dims", 0.0, 0.0, true, {}};
    for (std::size_t k = 1; k <= 9; k += 2) {
      Rng rng(mix_seed(104, k));
      const std::size_t h = dim(rng, 1, 9), w = dim(rng, 1, 9);
      Tensor y = conv2d(rand_t(Shape{2, h, w}, rng), rand_t(Shape{3, 2, k, k}, rng), rand_t(Shape{3}, rng),
                        Padding::same);
      if (y.shape() != Shape{3, h, w}) o.passed = false;
    }
    out.push_back(o);
  }
  {
    CheckOutcome o{"residual: w_v = 0 returns the input bit-for-bit", 0.0, 0.0, true, {}};
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(mix_seed(105, s));
      const std::size_t m = dim(rng, 1, 10), c = dim(rng, 1, 5);
      Tensor fsn = rand_t(Shape{m, c}, rng);
      TemporalAttentionHead head = TemporalAttentionHead::init(c, rng);
      head.w_v = Tensor::zeros(Shape{c, c});
      if (temporal_attention(fsn, head).output.data() != fsn.data()) o.passed = false;
    }
    out.push_back(o);
  }
  {
    CheckOutcome o{"deterministic forward", 0.0, 0.0, true, {}};
    Rng rng(106);
    TactileSequence seq;
    for (int t = 0; t < 3; ++t) {
      Image frame(8, 8);
      for (auto& v : frame.reshaped()) v = rng.uniform();
      seq.frames.push_back(frame);
    }
    const Vector a = tiny_stam(5).forward(seq).data();
    const Vector b = tiny_stam(5).forward(seq).data();
    o.passed = a == b;
    out.push_back(o);
  }
  return out;
}

bool report_outcomes(const std::vector<CheckOutcome>& outcomes, std::ostream& out) {
  bool all = true;
  for (const auto& o : outcomes) {
    all = all && o.passed;
    out << (o.passed ? "PASS " : "FAIL ") << std::left << std::setw(48) << o.name;
    if (o.tolerance > 0.0) {
      out << " worst=" << std::scientific << std::setprecision(3) << o.value << " tol=" << o.tolerance
          << std::defaultfloat;
    }
    if (!o.detail.empty()) out << " (" << o.detail << ")";
    out << '\n';
  }
  return all;
}

}  // namespace stam
