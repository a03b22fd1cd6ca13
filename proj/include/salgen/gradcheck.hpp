#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>

#include "salgen/tensor.hpp"

namespace salgen {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::int64_t worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  std::int64_t coords_checked = 0;
};

class GradCheckError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckOptions {
  double eps = 1e-6;
  /// Check at most this many coordinates (chosen deterministically); 0 = all.
  std::int64_t max_coords = 0;
  std::uint64_t seed = 0;
  /// When > 0, compare directional derivatives along this many random unit
  /// Gaussian directions instead of single coordinates.
  int directions = 0;
};

/// Compares the reverse-mode gradient of scalar f at x with central
/// differences. Per coordinate the error is
///   |analytic - (f(x+eps) - f(x-eps)) / 2eps| / (|analytic| + 1e-12)
/// and the maximum is returned. In directional mode "analytic" is grad . v and
/// the difference is taken along v. A non-finite forward value throws.
GradCheckResult finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                  GradCheckOptions opt = {});

}  // namespace salgen
