#pragma once

// KV-cache-correct prefill and decode under the loop wrapper.
//
// Prefill runs the loop body cache-less; decode runs it against the genuine
// past KV and crops every body evaluation back to a snapshot. In both cases a
// single stash pass writes the canonical loop-layer KV, fed by the state the
// cache strategy selects. Net effect on cache shape is identical to the
// unmodified model: one entry per layer per token (loop layers stay empty
// under cache strategy `none`).

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "loopstack/loop/looped_model.hpp"
#include "loopstack/numerics/rng.hpp"

namespace loopstack {

struct DecodeHooks {
  /// Leave loop-body KV writes in place (negative control for the audit).
  bool skip_crop = false;
};

struct PrefillResult {
  Matrix<float> logits;
  KVCache cache;
};

/// Looped prefill of a prompt into a fresh cache.
PrefillResult prefill(const Model& model, std::span<const std::uint32_t> tokens, const LoopConfig& cfg,
                      LoopTrace* trace = nullptr, const CacheObserver& observer = {});

/// Block-mode looped decode of one new-token state (1 x d, post-embedding).
/// Returns the final hidden state before the output norm.
HiddenState decode_step_block(const HiddenState& x, const Model& model, const LoopConfig& cfg, KVCache& cache,
                              LoopTrace* trace = nullptr, const DecodeHooks& hooks = {});

/// Layer-mode counterpart: per-layer snapshot, K pinned-routing iterations,
/// crop, stash.
HiddenState decode_step_layer(const HiddenState& x, const Model& model, const LoopConfig& cfg, KVCache& cache,
                              LoopTrace* trace = nullptr, const DecodeHooks& hooks = {});

/// Embeds `token` at cache.position(), runs a looped (or, with loop=false,
/// plain) decode step, advances the position and returns 1 x vocab logits.
Matrix<float> decode_step(const Model& model, std::uint32_t token, const LoopConfig& cfg, KVCache& cache, bool loop,
                          LoopTrace* trace = nullptr, const DecodeHooks& hooks = {});

struct Sampler {
  enum class Kind { greedy, temperature };
  Kind kind = Kind::greedy;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  static Sampler greedy() { return {}; }
  static Sampler with_temperature(double t, std::uint64_t seed) { return {Kind::temperature, t, seed}; }
};

/// Stateful token picker; greedy breaks ties toward the lower id.
class TokenSampler {
 public:
  explicit TokenSampler(const Sampler& s) : cfg_(s), rng_(s.seed) {}
  std::uint32_t sample(std::span<const float> logits);

 private:
  Sampler cfg_;
  Rng rng_;
};

struct StepRecord {
  std::uint32_t token = 0;
  bool looped = false;
  std::size_t window_evals = 0;  // loop-body evaluations during this step
  std::chrono::nanoseconds elapsed{0};
};

struct GenerateTrace {
  std::vector<StepRecord> steps;  // steps[0] is the prefill
  LoopTrace loop;
};

struct GenerateResult {
  std::vector<std::uint32_t> tokens;
  KVCache cache;
};

/// Looped prefill, then max_new - 1 decode steps gated by cfg.decode.
GenerateResult generate(const Model& model, std::span<const std::uint32_t> prompt, const LoopConfig& cfg,
                        std::size_t max_new, const Sampler& sampler, GenerateTrace* trace = nullptr,
                        const DecodeHooks& hooks = {}, const CacheObserver& observer = {});

/// Unlooped greedy/temperature generation with a plain KV cache.
std::vector<std::uint32_t> generate_plain(const Model& model, std::span<const std::uint32_t> prompt,
                                          std::size_t max_new, const Sampler& sampler);

/// Watches cache events of one generation and checks the snapshot/crop
/// protocol: every loop-body append to a loop layer is cropped before the
/// layer is written again, and each step grows every slot by exactly one entry
/// (zero for loop layers under cache strategy `none`).
class CacheAuditor {
 public:
  CacheAuditor(std::size_t n_layers, LoopWindow window, CacheStrategy cache);

  CacheObserver observer();
  /// Call before a decode step; records lengths.
  void begin_step(const KVCache& cache);
  /// Call after a decode step; returns an empty string when the step was
  /// clean, else a description of the first violation.
  std::string end_step(const KVCache& cache);
  /// Checks post-prefill slot lengths for a T-token prompt.
  std::string check_prefill(const KVCache& cache, std::size_t T) const;

 private:
  std::size_t n_layers_;
  LoopWindow window_;
  CacheStrategy cache_;
  std::vector<std::size_t> start_len_;
  std::vector<std::size_t> open_appends_;
  std::vector<std::size_t> appends_this_step_;
  std::string violation_;
};

}  // namespace loopstack
