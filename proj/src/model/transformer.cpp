#include "loopstack/model/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "loopstack/numerics/kernels.hpp"

namespace loopstack {

namespace {

void check_finite(const HiddenState& x, std::size_t layer) {
  if (!x.all_finite()) throw NumericError("non-finite activation after layer " + std::to_string(layer));
}

HiddenState attention(const HiddenState& h, const LayerWeights& layer, const ModelConfig& cfg,
                      const BlockOptions& opt) {
  const std::size_t T = h.rows();
  const std::size_t d = cfg.d_model;
  const std::size_t hd = cfg.head_dim;
  const Matrix<float> q = kernels::rope_rotate(kernels::linear(h, layer.wq), opt.position, cfg.rope_base, hd);
  const Matrix<float> k = kernels::rope_rotate(kernels::linear(h, layer.wk), opt.position, cfg.rope_base, hd);
  const Matrix<float> v = kernels::linear(h, layer.wv);

  const std::size_t past = opt.cache ? opt.cache->length() : 0;
  auto key_at = [&](std::size_t j) -> std::span<const float> {
    return j < past ? opt.cache->key(j) : k.row(j - past);
  };
  auto value_at = [&](std::size_t j) -> std::span<const float> {
    return j < past ? opt.cache->value(j) : v.row(j - past);
  };

  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  HiddenState out(T, d);
  std::vector<double> scores;
  std::vector<double> acc(hd);
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t n_keys = past + t + 1;
    scores.resize(n_keys);
    for (std::size_t head = 0; head < cfg.n_heads; ++head) {
      const std::size_t off = head * hd;
      const auto qh = q.row(t).subspan(off, hd);
      for (std::size_t j = 0; j < n_keys; ++j) scores[j] = kernels::dot(qh, key_at(j).subspan(off, hd)) * scale;
      kernels::softmax_inplace(scores);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t j = 0; j < n_keys; ++j) kernels::axpy(scores[j], value_at(j).subspan(off, hd), acc);
      for (std::size_t c = 0; c < hd; ++c) out(t, off + c) = static_cast<float>(acc[c]);
    }
  }
  if (opt.use_cache) opt.cache->append(k, v);
  return kernels::linear(out, layer.wo);
}

}  // namespace

std::vector<float> dense_mlp(std::span<const float> x, const MlpWeights& w) {
  const std::size_t hidden = w.w_gate.rows();
  std::vector<float> act(hidden);
  for (std::size_t i = 0; i < hidden; ++i) {
    const float gate = static_cast<float>(kernels::dot(x, w.w_gate.row(i)));
    const float up = static_cast<float>(kernels::dot(x, w.w_up.row(i)));
    act[i] = kernels::silu(gate) * up;
  }
  std::vector<float> y(w.w_down.rows());
  for (std::size_t o = 0; o < y.size(); ++o) y[o] = static_cast<float>(kernels::dot(act, w.w_down.row(o)));
  return y;
}

MoeResult moe_mlp(std::span<const float> x, const MoeWeights& w, std::size_t top_k, const TokenRoute* pinned) {
  const std::size_t n_experts = w.experts.size();
  MoeResult res;
  if (pinned) {
    if (pinned->experts.size() != top_k || pinned->weights.size() != top_k)
      throw ShapeError("moe_mlp: pinned route has " + std::to_string(pinned->experts.size()) +
                       " experts, expected top_k=" + std::to_string(top_k));
    for (auto e : pinned->experts)
      if (e >= n_experts) throw ShapeError("moe_mlp: pinned expert id out of range");
    res.route = *pinned;
  } else {
    if (top_k < 1 || top_k > n_experts) throw ShapeError("moe_mlp: top_k out of range");
    std::vector<double> logits(n_experts);
    for (std::size_t e = 0; e < n_experts; ++e) logits[e] = kernels::dot(x, w.router.row(e));
    std::vector<std::uint32_t> order(n_experts);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return logits[a] > logits[b]; });
    order.resize(top_k);
    std::sort(order.begin(), order.end());
    std::vector<double> sel(top_k);
    for (std::size_t i = 0; i < top_k; ++i) sel[i] = logits[order[i]];
    kernels::softmax_inplace(sel);
    res.route.experts = order;
    res.route.weights.assign(sel.begin(), sel.end());
  }
  std::vector<double> acc(x.size(), 0.0);
  for (std::size_t i = 0; i < top_k; ++i) {
    const auto ye = dense_mlp(x, w.experts[res.route.experts[i]]);
    kernels::axpy(static_cast<double>(res.route.weights[i]), std::span<const float>(ye), acc);
  }
  res.y.assign(acc.begin(), acc.end());
  return res;
}

HiddenState block_forward(const HiddenState& x, const LayerWeights& layer, const ModelConfig& cfg,
                          const BlockOptions& opt) {
  if (x.cols() != cfg.d_model)
    throw ShapeError("block_forward: state width " + std::to_string(x.cols()) + " != d_model " +
                     std::to_string(cfg.d_model));
  if (opt.cache && opt.cache->layer() != layer.index)
    throw ShapeError("block_forward: cache slot of layer " + std::to_string(opt.cache->layer()) +
                     " passed to layer " + std::to_string(layer.index));
  if (opt.use_cache && !opt.cache) throw ShapeError("block_forward: use_cache without a cache slot");
  if (opt.pinned && opt.pinned->size() != x.rows())
    throw ShapeError("block_forward: pinned routing covers " + std::to_string(opt.pinned->size()) + " rows, state has " +
                     std::to_string(x.rows()));

  const HiddenState a = attention(kernels::rms_norm_rows(x, layer.attn_norm, cfg.norm_eps), layer, cfg, opt);
  HiddenState x1(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) x1.flat()[i] = x.flat()[i] + a.flat()[i];

  const HiddenState h2 = kernels::rms_norm_rows(x1, layer.mlp_norm, cfg.norm_eps);
  HiddenState out = x1;
  if (opt.routing_out) opt.routing_out->clear();
  for (std::size_t t = 0; t < x.rows(); ++t) {
    std::vector<float> m;
    if (layer.moe) {
      auto r = moe_mlp(h2.row(t), *layer.moe, cfg.moe->top_k, opt.pinned ? &(*opt.pinned)[t] : nullptr);
      m = std::move(r.y);
      if (opt.routing_out) opt.routing_out->push_back(std::move(r.route));
    } else {
      m = dense_mlp(h2.row(t), layer.mlp);
    }
    auto row = out.row(t);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += m[j];
  }
  check_finite(out, layer.index);
  return out;
}

HiddenState embed_tokens(const Model& model, std::span<const std::uint32_t> tokens) {
  HiddenState x(tokens.size(), model.config.d_model);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] >= model.config.vocab_size)
      throw ShapeError("token id " + std::to_string(tokens[t]) + " >= vocab_size " +
                       std::to_string(model.config.vocab_size));
    std::copy(model.embed.row(tokens[t]).begin(), model.embed.row(tokens[t]).end(), x.row(t).begin());
  }
  return x;
}

Matrix<float> lm_logits(const Model& model, const HiddenState& x) {
  return kernels::linear(kernels::rms_norm_rows(x, model.final_norm, model.config.norm_eps), model.lm_head);
}

Matrix<float> model_forward(const Model& model, std::span<const std::uint32_t> tokens, KVCache* cache,
                            bool use_cache) {
  if (use_cache && !cache) throw ShapeError("model_forward: use_cache without a cache");
  HiddenState x = embed_tokens(model, tokens);
  const std::size_t pos = cache ? cache->position() : 0;
  for (const auto& layer : model.layers) {
    BlockOptions opt;
    opt.cache = cache ? &cache->slot(layer.index) : nullptr;
    opt.use_cache = use_cache;
    opt.position = pos;
    x = block_forward(x, layer, model.config, opt);
  }
  if (use_cache) cache->advance(tokens.size());
  return lm_logits(model, x);
}

KVCache make_cache(const Model& model) { return KVCache(model.n_layers(), model.config.d_model); }

}  // namespace loopstack
