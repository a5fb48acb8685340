#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "loopstack/model/config.hpp"
#include "loopstack/numerics/matrix.hpp"

namespace loopstack {

/// Gated SiLU MLP: down(silu(gate x) * up x). Matrices are (out x in).
struct MlpWeights {
  Matrix<float> w_gate;
  Matrix<float> w_up;
  Matrix<float> w_down;
};

struct MoeWeights {
  Matrix<float> router;  // n_experts x d
  std::vector<MlpWeights> experts;
};

struct LayerWeights {
  std::size_t index = 0;
  std::vector<float> attn_norm;
  Matrix<float> wq, wk, wv, wo;
  std::vector<float> mlp_norm;
  MlpWeights mlp;                 // dense layers
  std::optional<MoeWeights> moe;  // MoE layers

  bool is_moe() const noexcept { return moe.has_value(); }
};

/// The frozen network f = L_{N-1} o ... o L_0 plus embedding and head.
struct Model {
  ModelConfig config;
  Matrix<float> embed;  // vocab x d
  std::vector<LayerWeights> layers;
  std::vector<float> final_norm;
  Matrix<float> lm_head;  // vocab x d

  std::size_t n_layers() const noexcept { return layers.size(); }
};

/// Scale knobs for seeded synthetic models. Output projections are scaled so
/// each block's residual update is a moderate fraction of the stream norm.
struct SyntheticInit {
  double attn_out_scale = 0.6;
  double mlp_out_scale = 0.6;
  double router_scale = 1.0;
};

Model make_random_model(const ModelConfig& cfg, std::uint64_t seed, const SyntheticInit& init = {});

/// All-zero tensors with the shapes `cfg` implies.
Model make_zero_model(const ModelConfig& cfg);

/// Visits every tensor in canonical file order. Vectors are presented as
/// 1 x n matrices through `vec`.
struct TensorVisitor {
  std::function<void(const std::string& name, Matrix<float>& m)> mat;
  std::function<void(const std::string& name, std::vector<float>& v)> vec;
};
void visit_tensors(Model& model, const TensorVisitor& visitor);

struct ConstTensorVisitor {
  std::function<void(const std::string& name, const Matrix<float>& m)> mat;
  std::function<void(const std::string& name, const std::vector<float>& v)> vec;
};
void visit_tensors(const Model& model, const ConstTensorVisitor& visitor);

/// Zero attention and MLP output projections: every block becomes identity.
void make_pure_residual(Model& model);

}  // namespace loopstack
