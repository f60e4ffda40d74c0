#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ltcm/params.hpp"
#include "ltcm/tensor.hpp"

namespace ltcm {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor so that vanishing gradients are compared absolutely.
  double floor = 1e-6;
  // Check at most this many coordinates per tensor (evenly strided); 0 = all.
  std::size_t max_per_tensor = 0;
};

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences (f(p+h) - f(p-h)) / 2h, coordinate by coordinate. `f` must be
/// deterministic; it is evaluated once under a tape and twice per coordinate
/// without one. Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckResult grad_check(const std::function<ad::Tensor()>& f,
                           const std::vector<std::pair<std::string, ad::Tensor>>& params,
                           const GradCheckOptions& options = {});

/// Convenience overload over every tensor of a store.
GradCheckResult grad_check(const std::function<ad::Tensor()>& f, ParameterStore& params,
                           const GradCheckOptions& options = {});

}  // namespace ltcm
