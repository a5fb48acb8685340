#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "loopstack/loop/tableau.hpp"

namespace loopstack {

/// x <- g(x), K times.
struct NaiveLoop {
  std::size_t K = 1;
};

/// x <- x + alpha * F(x), K times; alpha defaults to 1/K (sub-stepping [0,1]).
struct Euler {
  std::size_t K = 1;
  std::optional<double> alpha;
  double step() const { return alpha.value_or(1.0 / static_cast<double>(K)); }
};

/// Euler with a per-iteration step schedule; K = alphas.size().
struct EulerSched {
  std::vector<double> alphas;
};

/// `steps` explicit RK steps of size h with an arbitrary tableau.
struct RkGeneric {
  ButcherTableau tableau;
  double h = 1.0;
  std::size_t steps = 1;
  std::string label = "rk_generic";
};

/// beta * g(x0) + (1 - beta) * (K damped Euler substeps).
struct RkAnchored {
  std::size_t K = 2;
  double beta = 0.5;
};

/// x_{k+1} = x_k + alpha F(x_k) + beta (x_k - x_{k-1}), x_{-1} = x_0.
struct HeavyBall {
  std::size_t K = 2;
  double alpha = 0.5;
  double beta = 0.0;
};

/// Type-II Anderson mixing over the last m increments.
struct Anderson {
  std::size_t K = 2;
  std::size_t m = 2;
  double beta = 0.5;
};

/// K/2 safeguarded Aitken delta-squared steps (two g evaluations each).
struct Aitken {
  std::size_t K = 2;
  bool safeguard = true;
};

/// x_{k+1} = g(mean(x_0..x_k)).
struct UniformLoop {
  std::size_t K = 2;
};

/// Damped Euler with step alpha, each iterate rescaled per token row to the
/// L2 norm of the corresponding row of x_0.
struct NormStab {
  std::size_t K = 2;
  double alpha = 0.5;
};

/// sum_i w_i x_i over the naive iterates x_0..x_K; K = weights.size() - 1.
struct PolyBlend {
  std::vector<double> weights;
};

using Strategy = std::variant<NaiveLoop, Euler, EulerSched, RkGeneric, RkAnchored, HeavyBall, Anderson, Aitken,
                              UniformLoop, NormStab, PolyBlend>;

RkGeneric midpoint_strategy(std::size_t K);
RkGeneric heun_strategy(std::size_t K);
RkGeneric rk4_strategy(std::size_t K);

/// Throws ConfigError when a strategy invariant is violated.
void validate(const Strategy& s);
/// Iteration count K as the strategy reports it.
std::size_t loop_count(const Strategy& s);
/// Evaluations of the window operator one application performs.
std::size_t expected_forward_passes(const Strategy& s);
std::string strategy_name(const Strategy& s);
/// Compact hyperparameter string for reports, e.g. "m=3;beta=1".
std::string strategy_params(const Strategy& s);

/// JSON form, e.g. {"name": "anderson", "K": 8, "m": 3, "beta": 1.0}.
/// Preset names: naive, euler, euler_sched, midpoint, heun, rk4, rk_generic,
/// rk_anchored, heavy_ball, anderson, aitken, uniform, norm_stab, poly_blend.
/// Unknown keys are rejected. `default_K` fills in a missing "K".
Strategy strategy_from_json(const nlohmann::json& j, std::optional<std::size_t> default_K = std::nullopt);
nlohmann::json to_json(const Strategy& s);

}  // namespace loopstack
