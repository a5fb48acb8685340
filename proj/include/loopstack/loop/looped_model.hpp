#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "loopstack/loop/integrators.hpp"
#include "loopstack/loop/window.hpp"
#include "loopstack/model/transformer.hpp"

namespace loopstack {

/// Which state feeds the single KV-writing stash pass over the loop layers.
enum class CacheStrategy { first, last, none };

/// Whether incremental decode steps loop.
struct DecodeMode {
  enum class Kind { bypass, full, first_n };
  Kind kind = Kind::full;
  std::size_t n = 0;  // first_n only

  static DecodeMode bypass() { return {Kind::bypass, 0}; }
  static DecodeMode full() { return {Kind::full, 0}; }
  static DecodeMode first_n(std::size_t n) { return {Kind::first_n, n}; }

  /// Whether the decode step producing generated token `index` (0-based,
  /// counting from the first token sampled after prefill) loops.
  bool loops_at(std::size_t index) const noexcept {
    return kind == Kind::full || (kind == Kind::first_n && index < n);
  }
};

std::string_view to_string(CacheStrategy c) noexcept;
CacheStrategy cache_strategy_from_string(std::string_view s);

struct LoopConfig {
  LoopWindow window;
  IterationMode mode = IterationMode::block;
  Strategy strategy = Euler{2, std::nullopt};
  CacheStrategy cache = CacheStrategy::last;
  DecodeMode decode = DecodeMode::full();

  void validate(const Model& model) const;
};

/// Instrumentation filled by the loop runners.
struct LoopTrace {
  std::size_t window_evals = 0;  // evaluations of g (block) or of L_l (layer)
  std::size_t layer_evals = 0;   // individual decoder-layer applications inside loop bodies
  /// Routing seen by each MoE loop layer, one entry per evaluation, in order.
  std::map<std::size_t, std::vector<LayerRouting>> routing;
};

/// Cache interaction of a loop-body evaluator.
struct BodyCache {
  /// Null: the body runs cache-less (prefill). Otherwise the body reads and
  /// appends to the loop-layer slots and is cropped back after every
  /// evaluation (decode).
  KVCache* cache = nullptr;
  /// Test hook: leave the body's writes in place.
  bool skip_crop = false;
};

/// g = L_b o ... o L_a applied with no KV writes.
HiddenState window_operator(const Model& model, const HiddenState& x, LoopWindow window, std::size_t position = 0);

/// F_g(x) = g(x) - x, in double.
State residual_field(const Model& model, const HiddenState& x, LoopWindow window, std::size_t position = 0);

/// Whole-window evaluator for block-mode strategies.
WindowOp make_block_op(const Model& model, LoopWindow window, std::size_t position, BodyCache body = {},
                       LoopTrace* trace = nullptr);

/// Single-layer evaluator for layer-mode strategies. MoE routing is computed
/// on the first call and pinned for every later call of this evaluator.
WindowOp make_layer_op(const Model& model, std::size_t layer, std::size_t position, BodyCache body = {},
                       LoopTrace* trace = nullptr);

/// g^(K) under (mode, strategy) on the pre-loop state x_a, cache-less.
HiddenState run_loop(const Model& model, const HiddenState& x_a, const LoopConfig& cfg, std::size_t position = 0,
                     LoopTrace* trace = nullptr);

/// Pre-loop layers, looped window, post-loop layers, head. No cache.
Matrix<float> looped_forward(const Model& model, std::span<const std::uint32_t> tokens, const LoopConfig& cfg,
                             LoopTrace* trace = nullptr);

/// Pre-loop state x_a for a prompt (layers 0..a-1, no cache).
HiddenState pre_loop_state(const Model& model, std::span<const std::uint32_t> tokens, LoopWindow window);

}  // namespace loopstack
