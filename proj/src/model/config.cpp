#include "loopstack/model/config.hpp"

#include <string>

#include "loopstack/error.hpp"

namespace loopstack {

void ModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || head_dim == 0) throw ConfigError("model: zero-sized dimension");
  if (n_heads * head_dim != d_model) {
    throw ConfigError("model: n_heads * head_dim (" + std::to_string(n_heads * head_dim) + ") != d_model (" +
                      std::to_string(d_model) + ")");
  }
  if (head_dim % 2 != 0) throw ConfigError("model: head_dim must be even for rotary embeddings");
  if (vocab_size == 0) throw ConfigError("model: vocab_size must be positive");
  if (!(norm_eps > 0.0f)) throw ConfigError("model: norm_eps must be positive");
  if (moe) {
    if (moe->n_experts == 0 || moe->top_k < 1 || moe->top_k > moe->n_experts)
      throw ConfigError("model: need 1 <= top_k <= n_experts");
    if (moe->expert_hidden == 0) throw ConfigError("model: expert_hidden must be positive");
  } else if (!moe_layer_indices.empty()) {
    throw ConfigError("model: moe_layer_indices given without a moe block");
  }
  for (std::size_t i : moe_layer_indices)
    if (i >= n_layers) throw ConfigError("model: moe layer index " + std::to_string(i) + " out of range");
  if (ffn_hidden == 0) {
    for (std::size_t i = 0; i < n_layers; ++i)
      if (!is_moe_layer(i)) throw ConfigError("model: ffn_hidden must be positive for dense layers");
  }
}

nlohmann::json to_json(const ModelConfig& cfg) {
  nlohmann::json j{{"n_layers", cfg.n_layers},   {"d_model", cfg.d_model},       {"n_heads", cfg.n_heads},
                   {"head_dim", cfg.head_dim},   {"ffn_hidden", cfg.ffn_hidden}, {"vocab_size", cfg.vocab_size},
                   {"rope_base", cfg.rope_base}, {"norm_eps", cfg.norm_eps}};
  if (cfg.moe) {
    j["moe"] = {{"n_experts", cfg.moe->n_experts},
                {"top_k", cfg.moe->top_k},
                {"expert_hidden", cfg.moe->expert_hidden}};
    j["moe_layer_indices"] = cfg.moe_layer_indices;
  }
  return j;
}

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> allowed, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
  }
}

}  // namespace

ModelConfig model_config_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"n_layers", "d_model", "n_heads", "head_dim", "ffn_hidden", "vocab_size", "rope_base", "norm_eps",
                  "moe", "moe_layer_indices"},
                 "model config");
  ModelConfig cfg;
  try {
    cfg.n_layers = j.at("n_layers").get<std::size_t>();
    cfg.d_model = j.at("d_model").get<std::size_t>();
    cfg.n_heads = j.at("n_heads").get<std::size_t>();
    cfg.head_dim = j.value("head_dim", cfg.d_model / std::max<std::size_t>(cfg.n_heads, 1));
    cfg.ffn_hidden = j.value("ffn_hidden", std::size_t{0});
    cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
    cfg.rope_base = j.value("rope_base", 10000.0);
    cfg.norm_eps = j.value("norm_eps", 1e-6f);
    if (j.contains("moe")) {
      const auto& m = j.at("moe");
      reject_unknown(m, {"n_experts", "top_k", "expert_hidden"}, "moe config");
      cfg.moe = MoeConfig{m.at("n_experts").get<std::size_t>(), m.at("top_k").get<std::size_t>(),
                          m.at("expert_hidden").get<std::size_t>()};
      if (j.contains("moe_layer_indices")) {
        cfg.moe_layer_indices = j.at("moe_layer_indices").get<std::set<std::size_t>>();
      } else {
        for (std::size_t i = 0; i < cfg.n_layers; ++i) cfg.moe_layer_indices.insert(i);
      }
    } else if (j.contains("moe_layer_indices")) {
      cfg.moe_layer_indices = j.at("moe_layer_indices").get<std::set<std::size_t>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

}  // namespace loopstack
