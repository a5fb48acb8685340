#pragma once

#include <cstddef>
#include <vector>

namespace loopstack {

/// Explicit Runge-Kutta coefficients: strictly lower-triangular a_ij and
/// output weights b_i.
struct ButcherTableau {
  std::size_t stages = 0;
  std::vector<double> a;  // stages x stages, row-major
  std::vector<double> b;

  double coeff(std::size_t i, std::size_t j) const { return a[i * stages + j]; }
  /// Throws ConfigError for size mismatches or any nonzero a_ij with j >= i.
  void validate() const;

  static ButcherTableau forward_euler();
  static ButcherTableau midpoint();
  static ButcherTableau heun();
  static ButcherTableau rk4();
  /// s = K stages with a_ij = 1/K for j < i, b_1 = beta + (1-beta)/K and
  /// b_i = (1-beta)/K otherwise. With h = 1 its single step equals
  /// beta * g(x0) + (1-beta) * (K damped Euler substeps from x0).
  static ButcherTableau anchored(std::size_t K, double beta);
};

}  // namespace loopstack
