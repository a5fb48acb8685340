#pragma once

#include <cstddef>
#include <optional>
#include <set>

#include <json.hpp>

namespace loopstack {

struct MoeConfig {
  std::size_t n_experts = 4;
  std::size_t top_k = 2;
  std::size_t expert_hidden = 32;

  friend bool operator==(const MoeConfig&, const MoeConfig&) = default;
};

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t head_dim = 8;
  std::size_t ffn_hidden = 64;
  std::size_t vocab_size = 64;
  std::optional<MoeConfig> moe;
  std::set<std::size_t> moe_layer_indices;
  double rope_base = 10000.0;
  float norm_eps = 1e-6f;

  bool is_moe_layer(std::size_t layer) const { return moe.has_value() && moe_layer_indices.contains(layer); }

  /// Throws ConfigError when an invariant is violated.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Same schema as the "config" object of a weight-file header. Unknown keys
/// are rejected.
nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace loopstack
