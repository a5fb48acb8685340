#include "loopstack/loop/looped_model.hpp"

#include <string>

#include "loopstack/error.hpp"

namespace loopstack {

std::string_view to_string(CacheStrategy c) noexcept {
  switch (c) {
    case CacheStrategy::first: return "first";
    case CacheStrategy::last: return "last";
    case CacheStrategy::none: return "none";
  }
  return "?";
}

CacheStrategy cache_strategy_from_string(std::string_view s) {
  if (s == "first") return CacheStrategy::first;
  if (s == "last") return CacheStrategy::last;
  if (s == "none") return CacheStrategy::none;
  throw ConfigError("unknown cache strategy '" + std::string(s) + "'");
}

void LoopConfig::validate(const Model& model) const {
  window.validate(model.n_layers());
  loopstack::validate(strategy);
}

HiddenState window_operator(const Model& model, const HiddenState& x, LoopWindow window, std::size_t position) {
  window.validate(model.n_layers());
  HiddenState y = x;
  for (std::size_t i = window.a; i <= window.b; ++i) {
    BlockOptions opt;
    opt.position = position;
    y = block_forward(y, model.layers[i], model.config, opt);
  }
  return y;
}

State residual_field(const Model& model, const HiddenState& x, LoopWindow window, std::size_t position) {
  return residual(x.cast<double>(), window_operator(model, x, window, position).cast<double>());
}

namespace {

HiddenState run_layer(const Model& model, std::size_t i, const HiddenState& x, std::size_t position,
                      const BodyCache& body, const LayerRouting* pinned, LayerRouting* routing_out) {
  BlockOptions opt;
  opt.position = position;
  opt.pinned = pinned;
  opt.routing_out = routing_out;
  if (body.cache) {
    opt.cache = &body.cache->slot(i);
    opt.use_cache = true;
  }
  return block_forward(x, model.layers[i], model.config, opt);
}

void record(LoopTrace* trace, std::size_t layer, const LayerRouting& r) {
  if (trace && !r.empty()) trace->routing[layer].push_back(r);
}

}  // namespace

WindowOp make_block_op(const Model& model, LoopWindow window, std::size_t position, BodyCache body,
                       LoopTrace* trace) {
  window.validate(model.n_layers());
  std::vector<std::size_t> snapshot;
  if (body.cache)
    for (std::size_t i = window.a; i <= window.b; ++i) snapshot.push_back(body.cache->length(i));
  return [&model, window, position, body, trace, snapshot](const State& xs) {
    HiddenState y = xs.cast<float>();
    for (std::size_t i = window.a; i <= window.b; ++i) {
      LayerRouting routing;
      y = run_layer(model, i, y, position, body, nullptr, &routing);
      record(trace, i, routing);
    }
    if (body.cache && !body.skip_crop)
      for (std::size_t i = window.a; i <= window.b; ++i) body.cache->crop(i, snapshot[i - window.a]);
    if (trace) {
      ++trace->window_evals;
      trace->layer_evals += window.width();
    }
    return y.cast<double>();
  };
}

WindowOp make_layer_op(const Model& model, std::size_t layer, std::size_t position, BodyCache body,
                       LoopTrace* trace) {
  if (layer >= model.n_layers()) throw ConfigError("make_layer_op: layer out of range");
  const std::size_t snapshot = body.cache ? body.cache->length(layer) : 0;
  auto pin = std::make_shared<std::optional<LayerRouting>>();
  return [&model, layer, position, body, trace, snapshot, pin](const State& xs) {
    LayerRouting routing;
    const HiddenState y =
        run_layer(model, layer, xs.cast<float>(), position, body, pin->has_value() ? &**pin : nullptr, &routing);
    if (!pin->has_value() && model.layers[layer].is_moe()) *pin = routing;
    record(trace, layer, routing);
    if (body.cache && !body.skip_crop) body.cache->crop(layer, snapshot);
    if (trace) {
      ++trace->window_evals;
      ++trace->layer_evals;
    }
    return y.cast<double>();
  };
}

HiddenState run_loop(const Model& model, const HiddenState& x_a, const LoopConfig& cfg, std::size_t position,
                     LoopTrace* trace) {
  cfg.validate(model);
  if (cfg.mode == IterationMode::block) {
    return apply_strategy(x_a.cast<double>(), make_block_op(model, cfg.window, position, {}, trace), cfg.strategy)
        .cast<float>();
  }
  HiddenState x = x_a;
  for (std::size_t i = cfg.window.a; i <= cfg.window.b; ++i)
    x = apply_strategy(x.cast<double>(), make_layer_op(model, i, position, {}, trace), cfg.strategy).cast<float>();
  return x;
}

HiddenState pre_loop_state(const Model& model, std::span<const std::uint32_t> tokens, LoopWindow window) {
  window.validate(model.n_layers());
  HiddenState x = embed_tokens(model, tokens);
  for (std::size_t i = 0; i < window.a; ++i) x = block_forward(x, model.layers[i], model.config);
  return x;
}

Matrix<float> looped_forward(const Model& model, std::span<const std::uint32_t> tokens, const LoopConfig& cfg,
                             LoopTrace* trace) {
  cfg.validate(model);
  HiddenState x = run_loop(model, pre_loop_state(model, tokens, cfg.window), cfg, 0, trace);
  for (std::size_t i = cfg.window.b + 1; i < model.n_layers(); ++i)
    x = block_forward(x, model.layers[i], model.config);
  return lm_logits(model, x);
}

}  // namespace loopstack
