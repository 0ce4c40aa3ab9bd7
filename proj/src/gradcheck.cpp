#include "stam/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "stam/ops.hpp"
#include "stam/random.hpp"

namespace stam {

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

GradCheckResult check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                const std::vector<Tensor>& inputs, double step,
                                std::uint64_t projection_seed) {
  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const auto& in : inputs) leaves.push_back(Tensor(in.shape(), in.data(), true));

  Vector projection;
  auto project = [&](const Tensor& out) {
    if (projection.size() == 0) {
      Rng rng(projection_seed);
      projection.resize(static_cast<Eigen::Index>(out.numel()));
      for (auto& p : projection) p = rng.uniform(0.5, 1.5);
    }
    return projection.dot(out.data());
  };

  Tape tape;
  {
    TapeScope scope(tape);
    Tensor out = f(leaves);
    project(out);  // fixes the projection length
    Tensor weights(out.shape(), projection);
    Tensor loss = sum(mul(out, weights));
    backward(loss, tape);
  }

  GradCheckResult result;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    const Vector analytic = leaves[i].grad();
    Vector& values = leaves[i].mutable_data();
    for (Eigen::Index j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + step;
      const double plus = project(f(leaves));
      values[j] = saved - step;
      const double minus = project(f(leaves));
      values[j] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double err = relative_error(analytic[j], numeric);
      ++result.checked;
      if (result.worst.empty() || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = "input#" + std::to_string(i) + "[" + std::to_string(j) + "]";
      }
    }
  }
  return result;
}

}  // namespace stam
