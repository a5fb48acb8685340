#include "loopstack/harness/commands.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <ostream>
#include <thread>

#include "loopstack/error.hpp"
#include "loopstack/model/weight_file.hpp"
#include "loopstack/numerics/kernels.hpp"
#include "loopstack/numerics/rng.hpp"

namespace loopstack::harness {

namespace {

void write_file(const std::filesystem::path& dir, const std::string& name, const std::string& content) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + (dir / name).string());
  out << content;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

/// Runs fn(i) for i in [0, n) on up to worker_threads() threads. The first
/// exception is rethrown after all workers finish.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(n, worker_threads());
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto body = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(body);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

std::vector<std::uint32_t> random_prompt(std::size_t len, std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint32_t> p(len);
  for (auto& t : p) t = static_cast<std::uint32_t>(rng.below(vocab));
  return p;
}

std::vector<State> references_for(const Model& model, const std::vector<HiddenState>& probes, LoopWindow window,
                                  IterationMode mode, std::size_t steps) {
  std::vector<State> refs(probes.size());
  parallel_for(probes.size(), [&](std::size_t p) {
    try {
      refs[p] = reference_endpoint(model, probes[p], window, mode, steps);
    } catch (const NumericError&) {
      // Flagged downstream: a non-finite reference marks every row diverged.
      refs[p] = State(probes[p].rows(), probes[p].cols(), std::nan(""));
    }
  });
  return refs;
}

std::string json_ids(const std::vector<std::uint32_t>& ids) {
  std::string s = "[";
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? "," : "") + std::to_string(ids[i]);
  return s + "]";
}

}  // namespace

FidelityReport cmd_fidelity(const RunConfig& cfg, bool write) {
  const Model model = load_model(cfg);
  const LoopWindow window = cfg.loop.resolve_window(model.n_layers());
  const std::vector<HiddenState> probes = probe_states(model, window, cfg.fidelity, cfg.seed);
  FidelityReport report;
  if (!cfg.loop.strategies.empty()) {
    const std::vector<State> refs =
        references_for(model, probes, window, cfg.loop.mode, cfg.fidelity.reference_steps);
    report.rows.resize(cfg.loop.strategies.size());
    parallel_for(report.rows.size(), [&](std::size_t i) {
      report.rows[i] = fidelity_row(model, probes, refs, window, cfg.loop.mode, cfg.loop.strategies[i]);
    });
  }
  if (write) {
    write_file(cfg.output_dir, "fidelity.csv", fidelity_csv(report.rows, cfg.deterministic));
    write_file(cfg.output_dir, "fidelity_probes.csv", probes_csv(report.rows));
    nlohmann::json meta{{"metric", "endpoint fidelity: Frobenius distance to an RK4 integration of the window "
                                   "residual field to t=1 (desk-scale stand-in for task benchmarks)"},
                        {"reference_steps", cfg.fidelity.reference_steps},
                        {"probes", cfg.fidelity.probes},
                        {"prompt_len", cfg.fidelity.prompt_len},
                        {"window", {window.a, window.b}},
                        {"mode", to_string(cfg.loop.mode)},
                        {"seed", cfg.seed}};
    write_file(cfg.output_dir, "fidelity_meta.json", meta.dump(2) + "\n");
  }
  return report;
}

SweepReport cmd_sweep(const RunConfig& cfg, bool write) {
  const Model model = load_model(cfg);
  std::vector<LoopWindow> windows = cfg.sweep.windows;
  if (windows.empty()) windows.push_back(cfg.loop.resolve_window(model.n_layers()));
  for (const LoopWindow& w : windows) w.validate(model.n_layers());

  SweepReport report;
  if (!cfg.loop.strategies.empty()) {
    const std::size_t S = cfg.loop.strategies.size();
    report.rows.resize(windows.size() * S);
    for (std::size_t w = 0; w < windows.size(); ++w) {
      const std::vector<HiddenState> probes = probe_states(model, windows[w], cfg.sweep.probe, cfg.seed);
      const std::vector<State> refs =
          references_for(model, probes, windows[w], cfg.loop.mode, cfg.sweep.probe.reference_steps);
      parallel_for(S, [&](std::size_t s) {
        report.rows[w * S + s] = fidelity_row(model, probes, refs, windows[w], cfg.loop.mode, cfg.loop.strategies[s],
                                              cfg.sweep.divergence_threshold);
      });
    }
  }
  if (write) write_file(cfg.output_dir, "sweep.csv", sweep_csv(report.rows, cfg.deterministic));
  return report;
}

GenReport cmd_gen(const RunConfig& cfg, bool write) {
  const Model model = load_model(cfg);
  const LoopConfig loop = cfg.loop.loop_config(model.n_layers());
  GenReport report;
  report.prompt = cfg.gen.prompt.empty() ? random_prompt(cfg.gen.prompt_len, model.config.vocab_size, cfg.seed)
                                         : cfg.gen.prompt;
  Sampler sampler = cfg.gen.sampler;
  sampler.seed = cfg.seed;
  GenerateTrace trace;
  const GenerateResult res =
      generate(model, report.prompt, loop, cfg.gen.max_new, sampler, &trace, DecodeHooks{cfg.gen.debug_disable_crop});
  report.tokens = res.tokens;
  report.steps = trace.steps;
  for (const StepRecord& s : trace.steps) report.window_evals.push_back(s.window_evals);

  if (write) {
    std::string csv = "step,token,looped,window_evals,elapsed_us\n";
    for (std::size_t i = 0; i < report.steps.size(); ++i) {
      const StepRecord& s = report.steps[i];
      const double us = cfg.deterministic ? 0.0 : std::chrono::duration<double, std::micro>(s.elapsed).count();
      csv += std::to_string(i) + "," + std::to_string(s.token) + "," + (s.looped ? "1" : "0") + "," +
             std::to_string(s.window_evals) + "," + fmt(us) + "\n";
    }
    write_file(cfg.output_dir, "gen.csv", csv);
    write_file(cfg.output_dir, "gen.json",
               "{\"prompt\": " + json_ids(report.prompt) + ", \"tokens\": " + json_ids(report.tokens) + "}\n");
  }
  return report;
}

AuditReport cmd_cache_audit(const RunConfig& cfg, bool write) {
  const Model model = load_model(cfg);
  const LoopConfig loop = cfg.loop.loop_config(model.n_layers());
  const std::vector<std::uint32_t> prompt =
      cfg.gen.prompt.empty() ? random_prompt(cfg.gen.prompt_len, model.config.vocab_size, cfg.seed) : cfg.gen.prompt;
  const DecodeHooks hooks{cfg.gen.debug_disable_crop};
  Sampler sampler = cfg.gen.sampler;
  sampler.seed = cfg.seed;
  TokenSampler pick(sampler);

  AuditReport report;
  CacheAuditor auditor(model.n_layers(), loop.window, loop.cache);
  auto loop_lengths = [&](const KVCache& c) {
    std::string s;
    for (std::size_t i = loop.window.a; i <= loop.window.b; ++i) s += (s.empty() ? "" : ",") + std::to_string(c.length(i));
    return s;
  };
  auto fail = [&](const std::string& where, const std::string& msg) {
    report.lines.push_back(where + ": FAIL " + msg);
    report.ok = false;
  };

  if (cfg.gen.max_new > 0) {
    PrefillResult pre = prefill(model, prompt, loop, nullptr, auditor.observer());
    KVCache& cache = pre.cache;
    if (std::string v = auditor.check_prefill(cache, prompt.size()); !v.empty()) {
      fail("prefill", v);
    } else {
      report.lines.push_back("prefill: OK, " + std::to_string(prompt.size()) +
                             " entries/layer, loop-layer lengths [" + loop_lengths(cache) + "]");
    }
    std::uint32_t tok = pick.sample(pre.logits.row(pre.logits.rows() - 1));
    for (std::size_t j = 0; report.ok && j + 1 < cfg.gen.max_new; ++j) {
      auditor.begin_step(cache);
      const std::string where = "step " + std::to_string(j + 1);
      try {
        const Matrix<float> logits = decode_step(model, tok, loop, cache, loop.decode.loops_at(j), nullptr, hooks);
        tok = pick.sample(logits.row(0));
      } catch (const InvariantError& e) {
        const std::string v = auditor.end_step(cache);
        fail(where, v.empty() ? e.what() : v);
        break;
      }
      if (std::string v = auditor.end_step(cache); !v.empty()) {
        fail(where, v);
      } else {
        report.lines.push_back(where + ": OK, delta=1/layer/step, loop-layer lengths [" + loop_lengths(cache) + "]");
      }
    }
  }
  if (write) {
    std::string log;
    for (const std::string& l : report.lines) log += l + "\n";
    write_file(cfg.output_dir, "cache_audit.log", log);
  }
  return report;
}

ToyReport cmd_toy(const RunConfig& cfg, bool write) {
  const ToyTask& task = cfg.toy;
  const toy::ToyDataset data = toy::make_toy_dataset(task.config, cfg.seed);
  ToyReport report;

  const std::size_t n_check = std::min(task.grad_check_points, data.x_train.rows());
  Matrix<double> xc(n_check, 4), yc(n_check, 2);
  for (std::size_t i = 0; i < n_check; ++i) {
    for (std::size_t j = 0; j < 4; ++j) xc(i, j) = data.x_train(i, j);
    for (std::size_t j = 0; j < 2; ++j) yc(i, j) = data.y_train(i, j);
  }
  if (n_check > 0)
    report.grad_rel_error =
        toy::toy_grad_check(toy::make_toy_net(task.config.hidden, cfg.seed + 1), xc, yc).max_rel_error;

  const toy::ToyTrainResult trained = toy::toy_train(task.config, data, cfg.seed + 1);
  const toy::ToyNet& net = trained.net;
  if (n_check > 0)
    report.grad_rel_error = std::max(report.grad_rel_error, toy::toy_grad_check(net, xc, yc).max_rel_error);
  report.train_losses = trained.losses;
  report.baseline_mse = toy::toy_eval(net, data.x_test, data.y_test, toy::LoopKind::baseline());
  report.Ks = task.Ks;
  for (std::size_t K : task.Ks) {
    report.naive_mse.push_back(toy::toy_eval(net, data.x_test, data.y_test, toy::LoopKind::naive(K)));
    report.substep_mse.push_back(toy::toy_eval(net, data.x_test, data.y_test, toy::LoopKind::substep(K)));
  }

  toy::Vec2 mean_y{0.0, 0.0};
  for (std::size_t i = 0; i < data.y_train.rows(); ++i) {
    mean_y[0] += data.y_train(i, 0);
    mean_y[1] += data.y_train(i, 1);
  }
  mean_y[0] /= static_cast<double>(data.y_train.rows());
  mean_y[1] /= static_cast<double>(data.y_train.rows());
  report.mean_target_preimage = toy::post_preimage(net, mean_y);

  report.scatter = toy::toy_scatter(net, data.x_test, task.Ks);
  const std::vector<toy::Vec2> baseline = toy::toy_endpoints(net, data.x_test, toy::LoopKind::baseline());
  std::vector<toy::Vec2> extra = baseline;
  extra.push_back(report.mean_target_preimage);
  const toy::GridBounds bounds = toy::covering_bounds(report.scatter, extra);
  report.grid = toy::toy_grid(net, data.y_test, bounds, task.resolution, worker_threads());

  if (write) {
    write_file(cfg.output_dir, "toy_grid.csv", toy::grid_csv(report.grid));
    write_file(cfg.output_dir, "toy_scatter.csv", toy::scatter_csv(report.scatter));
    std::string summary = "kind,K,mse\nbaseline,1," + fmt(report.baseline_mse) + "\n";
    for (std::size_t k = 0; k < report.Ks.size(); ++k) {
      summary += "naive," + std::to_string(report.Ks[k]) + "," + fmt(report.naive_mse[k]) + "\n";
      summary += "substep," + std::to_string(report.Ks[k]) + "," + fmt(report.substep_mse[k]) + "\n";
    }
    write_file(cfg.output_dir, "toy_summary.csv", summary);
    std::string losses = "step,train_loss\n";
    for (std::size_t i = 0; i < report.train_losses.size(); ++i)
      losses += std::to_string(i) + "," + fmt(report.train_losses[i]) + "\n";
    write_file(cfg.output_dir, "toy_train.csv", losses);
  }
  return report;
}

std::filesystem::path cmd_make_model(const RunConfig& cfg) {
  if (!cfg.model.synthetic) throw ConfigError("make-model: needs a synthetic model source");
  const Model model = load_model(cfg);
  std::filesystem::create_directories(cfg.output_dir);
  const std::filesystem::path path = cfg.output_dir / cfg.make_model.file;
  save_weights(model, path);
  return path;
}

int run_command(const std::string& command, const RunConfig& cfg, std::ostream& log) {
  kernels::set_deterministic(cfg.deterministic);
  try {
    if (command == "fidelity") {
      const FidelityReport r = cmd_fidelity(cfg);
      log << "fidelity: " << r.rows.size() << " rows -> " << (cfg.output_dir / "fidelity.csv").string() << "\n";
    } else if (command == "sweep") {
      const SweepReport r = cmd_sweep(cfg);
      std::size_t diverged = 0;
      for (const FidelityRow& row : r.rows) diverged += row.diverged;
      log << "sweep: " << r.rows.size() << " cells, " << diverged << " diverged -> "
          << (cfg.output_dir / "sweep.csv").string() << "\n";
    } else if (command == "gen") {
      const GenReport r = cmd_gen(cfg);
      log << "gen: " << r.tokens.size() << " tokens " << json_ids(r.tokens) << "\n";
    } else if (command == "cache-audit") {
      const AuditReport r = cmd_cache_audit(cfg);
      for (const std::string& l : r.lines) log << l << "\n";
      if (!r.ok) return kInvariantViolation;
    } else if (command == "toy") {
      const ToyReport r = cmd_toy(cfg);
      log << "toy: baseline mse " << fmt(r.baseline_mse);
      for (std::size_t k = 0; k < r.Ks.size(); ++k)
        log << "; K=" << r.Ks[k] << " naive " << fmt(r.naive_mse[k]) << " substep " << fmt(r.substep_mse[k]);
      log << "\n";
    } else if (command == "make-model") {
      log << "make-model: wrote " << cmd_make_model(cfg).string() << "\n";
    } else {
      log << "error: unknown command '" << command << "'\n";
      return kConfigError;
    }
  } catch (const InvariantError& e) {
    log << "invariant violation: " << e.what() << "\n";
    return kInvariantViolation;
  } catch (const NumericError& e) {
    log << "numeric divergence: " << e.what() << "\n";
    return kDivergence;
  } catch (const std::invalid_argument& e) {
    log << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const FormatError& e) {
    log << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::filesystem::filesystem_error& e) {
    log << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  return kOk;
}

}  // namespace loopstack::harness
