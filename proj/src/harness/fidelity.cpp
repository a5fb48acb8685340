#include "loopstack/harness/fidelity.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "loopstack/error.hpp"
#include "loopstack/numerics/rng.hpp"

namespace loopstack::harness {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

double frobenius_diff(const State& a, const State& b) {
  require_same_shape(a, b, "fidelity");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.flat()[i] - b.flat()[i];
    s += d * d;
  }
  return std::sqrt(s);
}

std::string row_prefix(const FidelityRow& r) {
  return csv_field(r.strategy) + "," + std::to_string(r.K) + "," + std::string(to_string(r.mode)) + "," +
         (r.diverged ? std::string("nan,nan") : fmt(r.mean_dev) + "," + fmt(r.p90_dev)) + "," +
         std::to_string(r.fwd_passes);
}

}  // namespace

std::vector<HiddenState> probe_states(const Model& model, LoopWindow window, const FidelityTask& task,
                                      std::uint64_t seed) {
  window.validate(model.n_layers());
  Rng rng(seed);
  std::vector<HiddenState> out;
  out.reserve(task.probes);
  for (std::size_t p = 0; p < task.probes; ++p) {
    std::vector<std::uint32_t> tokens(task.prompt_len);
    for (auto& t : tokens) t = static_cast<std::uint32_t>(rng.below(model.config.vocab_size));
    out.push_back(pre_loop_state(model, tokens, window));
  }
  return out;
}

State reference_endpoint(const Model& model, const HiddenState& x_a, LoopWindow window, IterationMode mode,
                         std::size_t steps) {
  const Strategy rk4 = rk4_strategy(steps);
  State x = x_a.cast<double>();
  if (mode == IterationMode::block) return apply_strategy(x, make_block_op(model, window, 0), rk4);
  for (std::size_t i = window.a; i <= window.b; ++i) x = apply_strategy(x, make_layer_op(model, i, 0), rk4);
  return x;
}

FidelityRow fidelity_row(const Model& model, const std::vector<HiddenState>& probes,
                         const std::vector<State>& references, LoopWindow window, IterationMode mode,
                         const Strategy& strategy, double divergence_threshold) {
  if (probes.size() != references.size()) throw ShapeError("fidelity_row: probes and references differ in count");
  FidelityRow row;
  row.strategy = strategy_label(strategy);
  row.K = loop_count(strategy);
  row.mode = mode;
  row.window = window;

  LoopConfig cfg;
  cfg.window = window;
  cfg.mode = mode;
  cfg.strategy = strategy;

  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t p = 0; p < probes.size(); ++p) {
    LoopTrace trace;
    HiddenState out;
    try {
      out = run_loop(model, probes[p], cfg, 0, &trace);
    } catch (const NumericError&) {
      row.diverged = true;
      break;
    }
    if (!out.all_finite() || out.max_abs() > divergence_threshold || !references[p].all_finite()) {
      row.diverged = true;
      break;
    }
    if (p == 0) row.fwd_passes = mode == IterationMode::block ? trace.window_evals : trace.window_evals / window.width();
    row.deviations.push_back(frobenius_diff(out.cast<double>(), references[p]));
  }
  const auto t1 = std::chrono::steady_clock::now();
  row.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count() /
                static_cast<double>(std::max<std::size_t>(1, probes.size()));

  if (row.diverged) {
    row.deviations.clear();
  } else if (!row.deviations.empty()) {
    double s = 0.0;
    for (double d : row.deviations) s += d;
    row.mean_dev = s / static_cast<double>(row.deviations.size());
    row.p90_dev = percentile(row.deviations, 0.9);
  }
  if (row.fwd_passes == 0) row.fwd_passes = expected_forward_passes(strategy);
  return row;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ConfigError("percentile: no values");
  std::sort(values.begin(), values.end());
  const double rank = std::ceil(std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size()));
  const std::size_t idx = rank < 1.0 ? 0 : static_cast<std::size_t>(rank) - 1;
  return values[std::min(idx, values.size() - 1)];
}

std::string strategy_label(const Strategy& s) {
  if (const auto* e = std::get_if<Euler>(&s); e && !e->alpha) return "euler";
  if (std::holds_alternative<RkGeneric>(s) && std::get<RkGeneric>(s).label != "rk_generic")
    return std::get<RkGeneric>(s).label;
  const std::string params = strategy_params(s);
  return params.empty() ? strategy_name(s) : strategy_name(s) + "(" + params + ")";
}

std::string fidelity_csv(const std::vector<FidelityRow>& rows, bool deterministic) {
  std::string out = "strategy,K,mode,mean_dev,p90_dev,fwd_passes,wall_ms\n";
  for (const FidelityRow& r : rows) out += row_prefix(r) + "," + (deterministic ? "0" : fmt(r.wall_ms)) + "\n";
  return out;
}

std::string sweep_csv(const std::vector<FidelityRow>& rows, bool deterministic) {
  std::string out = "strategy,K,mode,mean_dev,p90_dev,fwd_passes,wall_ms,window_a,window_b,diverged\n";
  for (const FidelityRow& r : rows)
    out += row_prefix(r) + "," + (deterministic ? "0" : fmt(r.wall_ms)) + "," + std::to_string(r.window.a) + "," +
           std::to_string(r.window.b) + "," + (r.diverged ? "1" : "0") + "\n";
  return out;
}

std::string probes_csv(const std::vector<FidelityRow>& rows) {
  std::string out = "strategy,K,mode,probe,dev\n";
  for (const FidelityRow& r : rows)
    for (std::size_t p = 0; p < r.deviations.size(); ++p)
      out += csv_field(r.strategy) + "," + std::to_string(r.K) + "," + std::string(to_string(r.mode)) + "," +
             std::to_string(p) + "," + fmt(r.deviations[p]) + "\n";
  return out;
}

}  // namespace loopstack::harness
