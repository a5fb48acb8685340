#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "loopstack/error.hpp"
#include "loopstack/harness/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"loopstack: looped-window inference runtime and benchmark harness"};
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string out;
  app.add_option("command", command, "fidelity | sweep | toy | gen | cache-audit | make-model")
      ->required()
      ->check(CLI::IsMember({"fidelity", "sweep", "toy", "gen", "cache-audit", "make-model"}));
  app.add_option("--config", config_path, "RunConfig JSON file")->required();
  app.add_option("--seed", seed, "override the run seed");
  app.add_flag("--deterministic", deterministic, "scalar kernels, zeroed timings: byte-identical outputs");
  app.add_option("--out", out, "output directory");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : loopstack::harness::kConfigError;
  }

  loopstack::harness::RunConfig cfg;
  try {
    cfg = loopstack::harness::load_run_config(config_path);
  } catch (const loopstack::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return loopstack::harness::kConfigError;
  }
  if (seed) cfg.seed = *seed;
  if (deterministic) cfg.deterministic = true;
  if (!out.empty()) cfg.output_dir = out;
  return loopstack::harness::run_command(command, cfg, std::cout);
}
