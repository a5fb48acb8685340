#pragma once

// Endpoint fidelity: distance between a strategy's loop output and a
// 64-substep RK4 integration of the window residual field to t = 1.

#include <cstdint>
#include <string>
#include <vector>

#include "loopstack/harness/run_config.hpp"

namespace loopstack::harness {

/// Pre-window states x_a of seeded random prompts, one per probe.
std::vector<HiddenState> probe_states(const Model& model, LoopWindow window, const FidelityTask& task,
                                      std::uint64_t seed);

/// RK4 endpoint of F_g over [0, 1] with `steps` substeps. In layer mode each
/// layer's field is integrated in turn. Returned in double.
State reference_endpoint(const Model& model, const HiddenState& x_a, LoopWindow window, IterationMode mode,
                         std::size_t steps);

struct FidelityRow {
  std::string strategy;  // name, or name(params)
  std::size_t K = 0;
  IterationMode mode = IterationMode::block;
  LoopWindow window;
  std::vector<double> deviations;  // one per probe; empty when diverged
  double mean_dev = 0.0;
  double p90_dev = 0.0;
  std::size_t fwd_passes = 0;  // loop-body evaluations per probe, per layer in layer mode
  double wall_ms = 0.0;
  bool diverged = false;
};

/// Runs one strategy on every probe. A non-finite activation or one above
/// `divergence_threshold` marks the row diverged instead of throwing.
FidelityRow fidelity_row(const Model& model, const std::vector<HiddenState>& probes,
                         const std::vector<State>& references, LoopWindow window, IterationMode mode,
                         const Strategy& strategy, double divergence_threshold = 1e6);

/// Nearest-rank percentile, q in [0, 1].
double percentile(std::vector<double> values, double q);

std::string strategy_label(const Strategy& s);

/// CSV writers. `deterministic` writes wall_ms as 0 so output is reproducible.
std::string fidelity_csv(const std::vector<FidelityRow>& rows, bool deterministic);
std::string sweep_csv(const std::vector<FidelityRow>& rows, bool deterministic);
std::string probes_csv(const std::vector<FidelityRow>& rows);

}  // namespace loopstack::harness
