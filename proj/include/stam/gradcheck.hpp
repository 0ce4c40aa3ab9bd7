#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stam/tensor.hpp"

namespace stam {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;  // number of scalar coordinates compared
  std::string worst;        // "input#i[j]" of the worst coordinate
};

/// Relative error with the denominator floored at `floor`, so coordinates
/// whose true gradient is exactly zero are compared absolutely.
double relative_error(double a, double b, double floor = 1e-3);

/// Compares reverse-mode gradients of `f` against central finite differences.
///
/// Non-scalar outputs are reduced by a fixed random projection so every
/// output coordinate contributes. Finite differences perturb each element of
/// each input by +-step and re-evaluate `f` without a tape.
GradCheckResult check_gradients(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                const std::vector<Tensor>& inputs, double step = 1e-5,
                                std::uint64_t projection_seed = 7);

}  // namespace stam
