#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "loopstack/harness/fidelity.hpp"

namespace loopstack::harness {

enum ExitCode : int { kOk = 0, kConfigError = 1, kInvariantViolation = 2, kDivergence = 3 };

struct FidelityReport {
  std::vector<FidelityRow> rows;
};

struct SweepReport {
  std::vector<FidelityRow> rows;
};

struct AuditReport {
  std::vector<std::string> lines;
  bool ok = true;
};

struct GenReport {
  std::vector<std::uint32_t> prompt;
  std::vector<std::uint32_t> tokens;
  std::vector<StepRecord> steps;
  /// Loop-body window evaluations spent on each step (steps[0] is prefill).
  std::vector<std::size_t> window_evals;
};

struct ToyReport {
  double grad_rel_error = 0.0;
  std::vector<double> train_losses;
  double baseline_mse = 0.0;
  std::vector<std::size_t> Ks;
  std::vector<double> naive_mse, substep_mse;
  toy::LossGrid grid;
  std::vector<toy::ScatterPoint> scatter;
  toy::Vec2 mean_target_preimage{};
};

// Each command computes its report and, when `write` is set, writes its files
// into cfg.output_dir.
FidelityReport cmd_fidelity(const RunConfig& cfg, bool write = true);
SweepReport cmd_sweep(const RunConfig& cfg, bool write = true);
AuditReport cmd_cache_audit(const RunConfig& cfg, bool write = true);
GenReport cmd_gen(const RunConfig& cfg, bool write = true);
ToyReport cmd_toy(const RunConfig& cfg, bool write = true);
std::filesystem::path cmd_make_model(const RunConfig& cfg);

/// Dispatches by command name, maps exceptions to exit codes and prints a
/// one-line summary (or the error) to `log`.
int run_command(const std::string& command, const RunConfig& cfg, std::ostream& log);

}  // namespace loopstack::harness
