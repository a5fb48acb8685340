#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "loopstack/model/kv_cache.hpp"
#include "loopstack/model/weights.hpp"

namespace loopstack {

/// Routing decision of one MoE layer for one token: expert ids in ascending
/// order and the matching mixing weights (softmax over the selected logits).
struct TokenRoute {
  std::vector<std::uint32_t> experts;
  std::vector<float> weights;

  friend bool operator==(const TokenRoute&, const TokenRoute&) = default;
};

/// One TokenRoute per row of the hidden state.
using LayerRouting = std::vector<TokenRoute>;

struct BlockOptions {
  /// Past keys/values to attend over. Null means no past.
  KvSlot* cache = nullptr;
  /// Append this call's keys/values to `cache`.
  bool use_cache = false;
  /// RoPE position of row 0.
  std::size_t position = 0;
  /// MoE layers reuse these routes (indices and weights) instead of gating.
  const LayerRouting* pinned = nullptr;
  /// Receives the routes actually used by an MoE layer.
  LayerRouting* routing_out = nullptr;
};

/// x + Attn(LN1(x)) + MLP(LN2(x + Attn(LN1(x)))) with causal RoPE attention
/// over (cached past ++ current rows).
HiddenState block_forward(const HiddenState& x, const LayerWeights& layer, const ModelConfig& cfg,
                          const BlockOptions& opt = {});

std::vector<float> dense_mlp(std::span<const float> x, const MlpWeights& w);

struct MoeResult {
  std::vector<float> y;
  TokenRoute route;
};

/// Top-k gated mixture. Without `pinned`, selects the top_k router logits
/// (ties go to the lower expert id) and renormalises with a softmax over the
/// selected logits. With `pinned`, reuses its experts and weights verbatim.
MoeResult moe_mlp(std::span<const float> x, const MoeWeights& w, std::size_t top_k,
                  const TokenRoute* pinned = nullptr);

HiddenState embed_tokens(const Model& model, std::span<const std::uint32_t> tokens);
/// Final norm followed by the LM head; one row of logits per state row.
Matrix<float> lm_logits(const Model& model, const HiddenState& x);

/// Full forward pass. With a cache, rows start at cache->position(); when
/// use_cache is set every layer slot grows by tokens.size() and the position
/// advances.
Matrix<float> model_forward(const Model& model, std::span<const std::uint32_t> tokens, KVCache* cache = nullptr,
                            bool use_cache = false);

KVCache make_cache(const Model& model);

}  // namespace loopstack
