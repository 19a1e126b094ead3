#include "mrp/finite_diff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mrp/error.hpp"

namespace mrp::ad {

Tensor fd_gradient(const ScalarFunction& f, const Tensor& point, double h) {
  if (!(h > 0.0)) throw Error(ErrorCode::invalid_argument, "fd_gradient: step must be positive");
  Tensor grad = point;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double x = point[i];
    probe[i] = x + h;
    const double up = f(probe);
    probe[i] = x - h;
    const double down = f(probe);
    probe[i] = x;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error(ErrorCode::non_finite,
                  "fd_gradient: non-finite function value at coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

GradientComparison compare_gradients(std::span<const double> analytic,
                                     std::span<const double> numeric, double abs_floor) {
  if (analytic.size() != numeric.size()) {
    throw Error(ErrorCode::shape_mismatch, "compare_gradients: length mismatch");
  }
  GradientComparison out;
  double worst_abs = -1.0;
  double worst_rel = -1.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    const double diff = std::abs(a - n);
    if (std::abs(n) < abs_floor) {
      out.max_abs_error = std::max(out.max_abs_error, diff);
      if (worst_rel < 0.0 && diff > worst_abs) {
        worst_abs = diff;
        out.worst_index = i;
        out.worst_analytic = a;
        out.worst_numeric = n;
      }
    } else {
      const double rel = diff / std::max(std::abs(a), std::abs(n));
      out.max_rel_error = std::max(out.max_rel_error, rel);
      if (rel > worst_rel) {
        worst_rel = rel;
        out.worst_index = i;
        out.worst_analytic = a;
        out.worst_numeric = n;
      }
    }
  }
  return out;
}

}  // namespace mrp::ad
