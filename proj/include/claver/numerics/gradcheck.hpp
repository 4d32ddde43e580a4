#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "claver/numerics/autodiff.hpp"

namespace claver {

/// Builds a scalar (1x1) from parameter variables on the given graph.
using ScalarFunction = std::function<ad::Var(ad::Graph&, std::span<const ad::Var>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares reverse-mode gradients with central differences, coordinate by
/// coordinate. Relative error is |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(const ScalarFunction& f, const std::vector<Matrix>& params, double eps = 1e-5);

}  // namespace claver
