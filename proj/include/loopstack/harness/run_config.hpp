#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "loopstack/decode/decode.hpp"
#include "loopstack/toy/toy_net.hpp"

namespace loopstack::harness {

struct SyntheticModel {
  ModelConfig config;
  std::optional<std::uint64_t> seed;  // falls back to the run seed
  SyntheticInit init;
};

/// At most one of path / synthetic is set; neither when the config has no
/// model section (the toy lab needs none).
struct ModelSource {
  std::optional<std::filesystem::path> path;
  std::optional<SyntheticModel> synthetic;
};

struct LoopSpec {
  std::optional<LoopWindow> window;
  double depth_fraction = kDefaultDepthFraction;
  std::size_t width = kDefaultWindowWidth;
  IterationMode mode = IterationMode::block;
  /// Each entry is already expanded over the configured K values.
  std::vector<Strategy> strategies;
  CacheStrategy cache = CacheStrategy::last;
  DecodeMode decode = DecodeMode::full();

  LoopWindow resolve_window(std::size_t n_layers) const;
  /// First strategy (Euler K=2 when none is configured).
  LoopConfig loop_config(std::size_t n_layers) const;
};

struct FidelityTask {
  std::size_t probes = 32;
  std::size_t prompt_len = 8;
  std::size_t reference_steps = 64;
};

struct SweepTask {
  FidelityTask probe;
  std::vector<LoopWindow> windows;  // empty: the loop window only
  double divergence_threshold = 1e6;
};

struct GenTask {
  std::vector<std::uint32_t> prompt;  // empty: a seeded random prompt of prompt_len tokens
  std::size_t prompt_len = 8;
  std::size_t max_new = 16;
  Sampler sampler;
  bool debug_disable_crop = false;
};

struct ToyTask {
  toy::ToyConfig config;
  std::size_t resolution = 220;
  std::vector<std::size_t> Ks{2, 4, 8};
  std::size_t grad_check_points = 64;
};

struct MakeModelTask {
  std::string file = "model.lsw";
};

struct RunConfig {
  ModelSource model;
  LoopSpec loop;
  FidelityTask fidelity;
  SweepTask sweep;
  GenTask gen;
  ToyTask toy;
  MakeModelTask make_model;
  std::filesystem::path output_dir = "out";
  bool deterministic = false;
  std::uint64_t seed = 0;
};

/// Parses a RunConfig document. Unknown keys at any level raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Builds or loads the configured model.
Model load_model(const RunConfig& cfg);

/// Worker count: LOOPSTACK_THREADS when set and positive, else hardware
/// concurrency (at least 1).
std::size_t worker_threads();

}  // namespace loopstack::harness
