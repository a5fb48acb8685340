#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "loopstack/loop/strategy.hpp"
#include "loopstack/numerics/matrix.hpp"

namespace loopstack {

/// One forward pass through the loop body: x -> g(x).
using WindowOp = std::function<State(const State&)>;

/// Wraps `g` so every evaluation increments `counter`.
WindowOp counted(WindowOp g, std::size_t& counter);

/// F_g(x) = g(x) - x.
State residual(const State& x, const State& gx);

/// Runs the strategy's update rule from x0 and returns the final iterate.
/// Throws NumericError when an iterate becomes non-finite.
State apply_strategy(const State& x0, const WindowOp& g, const Strategy& strategy);

/// `steps` explicit RK steps: k_i = F(x + h sum_j a_ij k_j), x += h sum_i b_i k_i.
State rk_generic(const State& x0, const WindowOp& g, const ButcherTableau& tableau, double h, std::size_t steps);

/// Anchor pass g(x0), K damped Euler substeps (the first reuses the anchor
/// evaluation), then beta * anchor + (1 - beta) * endpoint. K evaluations.
State rk_anchored(const State& x0, const WindowOp& g, std::size_t K, double beta);

/// Least-squares coefficients gamma minimising ||f - sum_j gamma_j dF_j||_2 via
/// ridge-regularised normal equations (ridge = 1e-8 * trace). Returns zeros
/// when every column vanishes.
std::vector<double> anderson_gamma(const std::deque<State>& dF, const State& f);

/// Sliding-window history for Anderson mixing.
class AndersonState {
 public:
  explicit AndersonState(std::size_t m) : m_(m) {}

  /// Given x_k and g(x_k), returns x_{k+1}. With no history this is
  /// x + beta (g(x) - x).
  State step(const State& x, const State& gx, double beta);

  std::size_t depth() const noexcept { return dX_.size(); }
  const std::vector<double>& last_gamma() const noexcept { return gamma_; }

 private:
  std::size_t m_;
  std::deque<State> dX_;
  std::deque<State> dF_;
  State x_prev_;
  State f_prev_;
  bool has_prev_ = false;
  std::vector<double> gamma_;
};

/// Per-coordinate delta-squared extrapolation x - d1^2/d2 with
/// d1 = g(x) - x and d2 = g(g(x)) - 2 g(x) + x. Coordinates where
/// |d2| < 1e-8 (1 + |d1|) take the plain move x + d1. With the safeguard the
/// move is clipped to |x_next - x| <= |d1|.
State aitken_step(const State& x, const State& gx, const State& ggx, bool safeguard = true);

/// Running mean of iterates for the uniform loop.
class UniformState {
 public:
  explicit UniformState(const State& x0) : sum_(x0), count_(1) {}
  State mean() const;
  void push(const State& x);
  std::size_t count() const noexcept { return count_; }

 private:
  State sum_;
  std::size_t count_;
};

/// x_{k+1} = g(mean of iterates so far); records x_{k+1} in the state.
State uniform_loop_step(UniformState& state, const WindowOp& g);

}  // namespace loopstack
