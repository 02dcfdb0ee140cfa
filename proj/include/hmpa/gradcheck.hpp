#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hmpa/tensor.hpp"

namespace hmpa {

// Evaluates the loss at the current parameter values. When compute_grad is
// true the callee must also accumulate d(loss)/d(param) into each parameter's
// grad buffer; the checker zeroes those buffers beforehand. The callee must
// be deterministic: two calls at the same parameters must return bitwise
// identical losses (checked, violation raises input_error).
using LossFn = std::function<double(bool compute_grad)>;

struct ArrayCheck {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
  std::vector<ArrayCheck> arrays;
  bool passed(double tol) const { return max_rel_err <= tol; }
};

// Central-difference check of analytic gradients over a sampled subset of
// coordinates of each parameter array (all coordinates when the array is
// smaller than coords_per_array). eps must lie in [1e-7, 1e-3].
// rel_err = |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
GradCheckReport finite_diff_check(const LossFn& loss, ParameterSet& params, double eps,
                                  std::uint64_t seed, std::size_t coords_per_array = 32);

}  // namespace hmpa
