#pragma once

#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

namespace stam {

struct CheckOutcome {
  std::string name;
  double value = 0.0;      // worst observed error / statistic
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;
};

/// Finite-difference gradient checks for every differentiable op, the
/// attention blocks and a tiny end-to-end STAM, each over `seeds` seeds.
/// Ops that are linear in every single input coordinate use 1e-6, the rest 1e-4.
std::vector<CheckOutcome> gradient_suite(std::size_t seeds = 20);

/// Normalization and range invariants of softmax and both attention blocks.
std::vector<CheckOutcome> invariant_suite(std::size_t seeds = 20);

/// Prints one line per outcome; returns true when all passed.
bool report_outcomes(const std::vector<CheckOutcome>& outcomes, std::ostream& out);

}  // namespace stam
