#ifndef MRP_FINITE_DIFF_HPP
#define MRP_FINITE_DIFF_HPP

#include <functional>
#include <span>
#include <vector>

#include "mrp/tensor.hpp"

namespace mrp::ad {

using ScalarFunction = std::function<double(const Tensor&)>;

/// Central-difference gradient (f(x + h e_i) - f(x - h e_i)) / 2h, one
/// coordinate at a time. The result has the shape of `point`.
Tensor fd_gradient(const ScalarFunction& f, const Tensor& point, double h = 1e-5);

struct GradientComparison {
  double max_rel_error = 0.0;  // over coordinates with |numeric| >= abs_floor
  double max_abs_error = 0.0;  // over coordinates with |numeric| < abs_floor
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;

  bool within(double rel_tol, double abs_tol) const {
    return max_rel_error <= rel_tol && max_abs_error <= abs_tol;
  }
};

/// Coordinates whose finite-difference value is below `abs_floor` in
/// magnitude are compared absolutely; the rest relatively against
/// max(|analytic|, |numeric|). The worst coordinate is the one with the
/// largest relative error, or the largest absolute error if none is relative.
GradientComparison compare_gradients(std::span<const double> analytic,
                                     std::span<const double> numeric, double abs_floor);

}  // namespace mrp::ad

#endif  // MRP_FINITE_DIFF_HPP
