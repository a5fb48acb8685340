#include "loopstack/model/weights.hpp"

#include <cmath>

#include "loopstack/numerics/rng.hpp"

namespace loopstack {

namespace {

Matrix<float> gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Matrix<float> m(rows, cols);
  for (float& v : m.flat()) v = static_cast<float>(rng.normal(0.0, stddev));
  return m;
}

MlpWeights make_mlp(std::size_t d, std::size_t hidden, double out_scale, Rng& rng) {
  MlpWeights w;
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double out_std = out_scale / std::sqrt(static_cast<double>(hidden));
  w.w_gate = gaussian(hidden, d, in_std, rng);
  w.w_up = gaussian(hidden, d, in_std, rng);
  w.w_down = gaussian(d, hidden, out_std, rng);
  return w;
}

std::vector<float> gains(std::size_t d, Rng& rng) {
  std::vector<float> g(d);
  for (float& v : g) v = static_cast<float>(1.0 + 0.1 * rng.normal());
  return g;
}

}  // namespace

Model make_random_model(const ModelConfig& cfg, std::uint64_t seed, const SyntheticInit& init) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t d = cfg.d_model;
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  Model m;
  m.config = cfg;
  m.embed = gaussian(cfg.vocab_size, d, 1.0, rng);
  m.layers.reserve(cfg.n_layers);
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    LayerWeights l;
    l.index = i;
    l.attn_norm = gains(d, rng);
    l.wq = gaussian(d, d, in_std, rng);
    l.wk = gaussian(d, d, in_std, rng);
    l.wv = gaussian(d, d, in_std, rng);
    l.wo = gaussian(d, d, init.attn_out_scale * in_std, rng);
    l.mlp_norm = gains(d, rng);
    if (cfg.is_moe_layer(i)) {
      MoeWeights moe;
      moe.router = gaussian(cfg.moe->n_experts, d, init.router_scale * in_std, rng);
      for (std::size_t e = 0; e < cfg.moe->n_experts; ++e)
        moe.experts.push_back(make_mlp(d, cfg.moe->expert_hidden, init.mlp_out_scale, rng));
      l.moe = std::move(moe);
    } else {
      l.mlp = make_mlp(d, cfg.ffn_hidden, init.mlp_out_scale, rng);
    }
    m.layers.push_back(std::move(l));
  }
  m.final_norm = gains(d, rng);
  m.lm_head = gaussian(cfg.vocab_size, d, in_std, rng);
  return m;
}

Model make_zero_model(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  auto mlp = [d](std::size_t hidden) {
    return MlpWeights{Matrix<float>(hidden, d), Matrix<float>(hidden, d), Matrix<float>(d, hidden)};
  };
  Model m;
  m.config = cfg;
  m.embed = Matrix<float>(cfg.vocab_size, d);
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    LayerWeights l;
    l.index = i;
    l.attn_norm.assign(d, 0.0f);
    l.wq = l.wk = l.wv = l.wo = Matrix<float>(d, d);
    l.mlp_norm.assign(d, 0.0f);
    if (cfg.is_moe_layer(i)) {
      MoeWeights moe;
      moe.router = Matrix<float>(cfg.moe->n_experts, d);
      moe.experts.assign(cfg.moe->n_experts, mlp(cfg.moe->expert_hidden));
      l.moe = std::move(moe);
    } else {
      l.mlp = mlp(cfg.ffn_hidden);
    }
    m.layers.push_back(std::move(l));
  }
  m.final_norm.assign(d, 0.0f);
  m.lm_head = Matrix<float>(cfg.vocab_size, d);
  return m;
}

template <typename M, typename V>
void visit_impl(M& model, const V& v) {
  v.mat("embed", model.embed);
  for (auto& l : model.layers) {
    const std::string p = "layers." + std::to_string(l.index) + ".";
    v.vec(p + "attn_norm", l.attn_norm);
    v.mat(p + "wq", l.wq);
    v.mat(p + "wk", l.wk);
    v.mat(p + "wv", l.wv);
    v.mat(p + "wo", l.wo);
    v.vec(p + "mlp_norm", l.mlp_norm);
    if (l.moe) {
      v.mat(p + "router", l.moe->router);
      for (std::size_t e = 0; e < l.moe->experts.size(); ++e) {
        const std::string ep = p + "experts." + std::to_string(e) + ".";
        v.mat(ep + "w_gate", l.moe->experts[e].w_gate);
        v.mat(ep + "w_up", l.moe->experts[e].w_up);
        v.mat(ep + "w_down", l.moe->experts[e].w_down);
      }
    } else {
      v.mat(p + "w_gate", l.mlp.w_gate);
      v.mat(p + "w_up", l.mlp.w_up);
      v.mat(p + "w_down", l.mlp.w_down);
    }
  }
  v.vec("final_norm", model.final_norm);
  v.mat("lm_head", model.lm_head);
}

void visit_tensors(Model& model, const TensorVisitor& v) { visit_impl(model, v); }
void visit_tensors(const Model& model, const ConstTensorVisitor& v) { visit_impl(model, v); }

void make_pure_residual(Model& model) {
  for (auto& l : model.layers) {
    for (float& w : l.wo.flat()) w = 0.0f;
    if (l.moe) {
      for (auto& e : l.moe->experts)
        for (float& w : e.w_down.flat()) w = 0.0f;
    } else {
      for (float& w : l.mlp.w_down.flat()) w = 0.0f;
    }
  }
}

}  // namespace loopstack
