#include "loopstack/decode/decode.hpp"

#include <cmath>

#include "loopstack/error.hpp"

namespace loopstack {

namespace {

using Clock = std::chrono::steady_clock;

HiddenState cached_layer(const Model& model, std::size_t i, const HiddenState& x, KVCache& cache,
                         std::size_t position) {
  BlockOptions opt;
  opt.cache = &cache.slot(i);
  opt.use_cache = true;
  opt.position = position;
  return block_forward(x, model.layers[i], model.config, opt);
}

void stash_chain(const Model& model, const LoopWindow& w, HiddenState z, KVCache& cache, std::size_t position) {
  for (std::size_t i = w.a; i <= w.b; ++i) z = cached_layer(model, i, z, cache, position);
}

}  // namespace

PrefillResult prefill(const Model& model, std::span<const std::uint32_t> tokens, const LoopConfig& cfg,
                      LoopTrace* trace, const CacheObserver& observer) {
  cfg.validate(model);
  if (tokens.empty()) throw ConfigError("prefill: empty prompt");
  PrefillResult res{{}, make_cache(model)};
  if (observer) res.cache.set_observer(observer);
  KVCache& cache = res.cache;
  const std::size_t pos = cache.position();

  HiddenState x = embed_tokens(model, tokens);
  for (std::size_t i = 0; i < cfg.window.a; ++i) x = cached_layer(model, i, x, cache, pos);
  const HiddenState x_a = x;
  x = run_loop(model, x_a, cfg, pos, trace);
  if (cfg.cache != CacheStrategy::none)
    stash_chain(model, cfg.window, cfg.cache == CacheStrategy::last ? x : x_a, cache, pos);
  for (std::size_t i = cfg.window.b + 1; i < model.n_layers(); ++i) x = cached_layer(model, i, x, cache, pos);
  cache.advance(tokens.size());
  res.logits = lm_logits(model, x);
  return res;
}

HiddenState decode_step_block(const HiddenState& x_in, const Model& model, const LoopConfig& cfg, KVCache& cache,
                              LoopTrace* trace, const DecodeHooks& hooks) {
  cfg.validate(model);
  if (x_in.rows() != 1) throw ShapeError("decode_step_block: expects a single new-token row");
  const std::size_t pos = cache.position();
  HiddenState x = x_in;
  for (std::size_t i = 0; i < cfg.window.a; ++i) x = cached_layer(model, i, x, cache, pos);
  const HiddenState x_a = x;

  std::vector<std::size_t> snapshot;
  for (std::size_t i = cfg.window.a; i <= cfg.window.b; ++i) snapshot.push_back(cache.length(i));

  const WindowOp body = make_block_op(model, cfg.window, pos, BodyCache{&cache, hooks.skip_crop}, trace);
  x = apply_strategy(x.cast<double>(), body, cfg.strategy).cast<float>();

  if (!hooks.skip_crop)
    for (std::size_t i = cfg.window.a; i <= cfg.window.b; ++i)
      if (cache.length(i) != snapshot[i - cfg.window.a])
        throw InvariantError("decode_step_block: layer " + std::to_string(i) + " not restored to its snapshot");

  if (cfg.cache != CacheStrategy::none)
    stash_chain(model, cfg.window, cfg.cache == CacheStrategy::last ? x : x_a, cache, pos);
  for (std::size_t i = cfg.window.b + 1; i < model.n_layers(); ++i) x = cached_layer(model, i, x, cache, pos);
  return x;
}

HiddenState decode_step_layer(const HiddenState& x_in, const Model& model, const LoopConfig& cfg, KVCache& cache,
                              LoopTrace* trace, const DecodeHooks& hooks) {
  cfg.validate(model);
  if (x_in.rows() != 1) throw ShapeError("decode_step_layer: expects a single new-token row");
  const std::size_t pos = cache.position();
  HiddenState x = x_in;
  for (std::size_t i = 0; i < cfg.window.a; ++i) x = cached_layer(model, i, x, cache, pos);
  const HiddenState x_a = x;

  for (std::size_t i = cfg.window.a; i <= cfg.window.b; ++i) {
    const std::size_t snapshot = cache.length(i);
    const WindowOp body = make_layer_op(model, i, pos, BodyCache{&cache, hooks.skip_crop}, trace);
    x = apply_strategy(x.cast<double>(), body, cfg.strategy).cast<float>();
    if (!hooks.skip_crop && cache.length(i) != snapshot)
      throw InvariantError("decode_step_layer: layer " + std::to_string(i) + " not restored to its snapshot");
    if (cfg.cache != CacheStrategy::none)
      cached_layer(model, i, cfg.cache == CacheStrategy::last ? x : x_a, cache, pos);
  }
  for (std::size_t i = cfg.window.b + 1; i < model.n_layers(); ++i) x = cached_layer(model, i, x, cache, pos);
  return x;
}

Matrix<float> decode_step(const Model& model, std::uint32_t token, const LoopConfig& cfg, KVCache& cache, bool loop,
                          LoopTrace* trace, const DecodeHooks& hooks) {
  const std::uint32_t tok[1] = {token};
  if (!loop) return model_forward(model, tok, &cache, true);
  const HiddenState x0 = embed_tokens(model, tok);
  const HiddenState x = cfg.mode == IterationMode::block ? decode_step_block(x0, model, cfg, cache, trace, hooks)
                                                         : decode_step_layer(x0, model, cfg, cache, trace, hooks);
  cache.advance(1);
  return lm_logits(model, x);
}

std::uint32_t TokenSampler::sample(std::span<const float> logits) {
  if (logits.empty()) throw ShapeError("sample: empty logits");
  if (cfg_.kind == Sampler::Kind::greedy || cfg_.temperature <= 0.0) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
      if (logits[i] > logits[best]) best = i;
    return static_cast<std::uint32_t>(best);
  }
  std::vector<double> p(logits.begin(), logits.end());
  double mx = p[0];
  for (double v : p) mx = std::max(mx, v);
  double sum = 0.0;
  for (double& v : p) sum += (v = std::exp((v - mx) / cfg_.temperature));
  double u = rng_.uniform() * sum;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (u < p[i]) return static_cast<std::uint32_t>(i);
    u -= p[i];
  }
  return static_cast<std::uint32_t>(p.size() - 1);
}

GenerateResult generate(const Model& model, std::span<const std::uint32_t> prompt, const LoopConfig& cfg,
                        std::size_t max_new, const Sampler& sampler, GenerateTrace* trace, const DecodeHooks& hooks,
                        const CacheObserver& observer) {
  GenerateResult out;
  if (max_new == 0) return out;
  TokenSampler pick(sampler);
  LoopTrace* lt = trace ? &trace->loop : nullptr;

  auto evals = [&] { return lt ? lt->window_evals : std::size_t{0}; };
  const std::size_t before_prefill = evals();
  auto t0 = Clock::now();
  PrefillResult pre = prefill(model, prompt, cfg, lt, observer);
  out.cache = std::move(pre.cache);
  std::uint32_t tok = pick.sample(pre.logits.row(pre.logits.rows() - 1));
  out.tokens.push_back(tok);
  if (trace) trace->steps.push_back({tok, true, evals() - before_prefill, Clock::now() - t0});

  for (std::size_t j = 0; j + 1 < max_new; ++j) {
    const bool loop = cfg.decode.loops_at(j);
    const std::size_t before = evals();
    t0 = Clock::now();
    const Matrix<float> logits = decode_step(model, tok, cfg, out.cache, loop, lt, hooks);
    tok = pick.sample(logits.row(0));
    out.tokens.push_back(tok);
    if (trace) trace->steps.push_back({tok, loop, evals() - before, Clock::now() - t0});
  }
  return out;
}

std::vector<std::uint32_t> generate_plain(const Model& model, std::span<const std::uint32_t> prompt,
                                          std::size_t max_new, const Sampler& sampler) {
  std::vector<std::uint32_t> out;
  if (max_new == 0) return out;
  TokenSampler pick(sampler);
  KVCache cache = make_cache(model);
  Matrix<float> logits = model_forward(model, prompt, &cache, true);
  std::uint32_t tok = pick.sample(logits.row(logits.rows() - 1));
  out.push_back(tok);
  while (out.size() < max_new) {
    const std::uint32_t one[1] = {tok};
    logits = model_forward(model, one, &cache, true);
    tok = pick.sample(logits.row(0));
    out.push_back(tok);
  }
  return out;
}

CacheAuditor::CacheAuditor(std::size_t n_layers, LoopWindow window, CacheStrategy cache)
    : n_layers_(n_layers),
      window_(window),
      cache_(cache),
      start_len_(n_layers, 0),
      open_appends_(n_layers, 0),
      appends_this_step_(n_layers, 0) {}

CacheObserver CacheAuditor::observer() {
  return [this](const CacheEvent& e) {
    if (e.layer >= n_layers_ || !window_.contains(e.layer) || !violation_.empty()) return;
    if (e.kind == CacheEvent::Kind::append) {
      ++appends_this_step_[e.layer];
      if (open_appends_[e.layer] > 0) {
        violation_ = "layer " + std::to_string(e.layer) + ": loop-body write of iteration " +
                     std::to_string(appends_this_step_[e.layer] - 1) + " was not cropped";
        return;
      }
      open_appends_[e.layer] += e.count;
    } else {
      if (e.count != open_appends_[e.layer]) {
        violation_ = "layer " + std::to_string(e.layer) + ": crop removed " + std::to_string(e.count) +
                     " entries, expected " + std::to_string(open_appends_[e.layer]);
        return;
      }
      open_appends_[e.layer] = 0;
    }
  };
}

void CacheAuditor::begin_step(const KVCache& cache) {
  for (std::size_t i = 0; i < n_layers_; ++i) {
    start_len_[i] = cache.length(i);
    open_appends_[i] = 0;
    appends_this_step_[i] = 0;
  }
  violation_.clear();
}

std::string CacheAuditor::end_step(const KVCache& cache) {
  if (!violation_.empty()) return violation_;
  for (std::size_t i = 0; i < n_layers_; ++i) {
    const std::size_t want = (window_.contains(i) && cache_ == CacheStrategy::none) ? 0 : 1;
    const std::size_t got = cache.length(i) - start_len_[i];
    if (cache.length(i) < start_len_[i] || got != want)
      return "layer " + std::to_string(i) + ": step delta " +
             std::to_string(static_cast<long long>(cache.length(i)) - static_cast<long long>(start_len_[i])) +
             ", expected " + std::to_string(want);
  }
  return {};
}

std::string CacheAuditor::check_prefill(const KVCache& cache, std::size_t T) const {
  for (std::size_t i = 0; i < n_layers_; ++i) {
    const std::size_t want = (window_.contains(i) && cache_ == CacheStrategy::none) ? 0 : T;
    if (cache.length(i) != want)
      return "layer " + std::to_string(i) + ": " + std::to_string(cache.length(i)) + " entries after prefill, expected " +
             std::to_string(want);
  }
  return {};
}

}  // namespace loopstack
