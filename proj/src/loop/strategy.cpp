#include "loopstack/loop/strategy.hpp"

#include <cmath>
#include <sstream>

#include "loopstack/error.hpp"

namespace loopstack {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

void require_K(std::size_t K, const char* who) {
  if (K < 1) throw ConfigError(std::string(who) + ": K must be >= 1");
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::string fmt_list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s + "]";
}

}  // namespace

RkGeneric midpoint_strategy(std::size_t K) {
  require_K(K, "midpoint");
  return {ButcherTableau::midpoint(), 1.0 / static_cast<double>(K), K, "midpoint"};
}
RkGeneric heun_strategy(std::size_t K) {
  require_K(K, "heun");
  return {ButcherTableau::heun(), 1.0 / static_cast<double>(K), K, "heun"};
}
RkGeneric rk4_strategy(std::size_t K) {
  require_K(K, "rk4");
  return {ButcherTableau::rk4(), 1.0 / static_cast<double>(K), K, "rk4"};
}

void validate(const Strategy& strategy) {
  std::visit(overloaded{
                 [](const NaiveLoop& s) { require_K(s.K, "naive"); },
                 [](const Euler& s) {
                   require_K(s.K, "euler");
                   if (s.alpha && !std::isfinite(*s.alpha)) throw ConfigError("euler: alpha must be finite");
                 },
                 [](const EulerSched& s) {
                   if (s.alphas.empty()) throw ConfigError("euler_sched: empty schedule");
                 },
                 [](const RkGeneric& s) {
                   s.tableau.validate();
                   if (s.steps < 1) throw ConfigError("rk_generic: steps must be >= 1");
                   if (!std::isfinite(s.h)) throw ConfigError("rk_generic: h must be finite");
                 },
                 [](const RkAnchored& s) {
                   require_K(s.K, "rk_anchored");
                   if (!(s.beta >= 0.0 && s.beta <= 1.0)) throw ConfigError("rk_anchored: beta must lie in [0,1]");
                 },
                 [](const HeavyBall& s) { require_K(s.K, "heavy_ball"); },
                 [](const Anderson& s) {
                   require_K(s.K, "anderson");
                   if (s.m < 1) throw ConfigError("anderson: m must be >= 1");
                 },
                 [](const Aitken& s) {
                   require_K(s.K, "aitken");
                   if (s.K % 2 != 0) throw ConfigError("aitken: K must be even");
                 },
                 [](const UniformLoop& s) { require_K(s.K, "uniform"); },
                 [](const NormStab& s) { require_K(s.K, "norm_stab"); },
                 [](const PolyBlend& s) {
                   if (s.weights.size() < 2) throw ConfigError("poly_blend: need K+1 >= 2 weights");
                   double sum = 0.0;
                   for (double w : s.weights) sum += w;
                   if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("poly_blend: weights must sum to 1");
                 },
             },
             strategy);
}

std::size_t loop_count(const Strategy& strategy) {
  return std::visit(overloaded{
                        [](const EulerSched& s) { return s.alphas.size(); },
                        [](const RkGeneric& s) { return s.steps; },
                        [](const PolyBlend& s) { return s.weights.size() - 1; },
                        [](const auto& s) -> std::size_t { return s.K; },
                    },
                    strategy);
}

std::size_t expected_forward_passes(const Strategy& strategy) {
  return std::visit(overloaded{
                        [](const RkGeneric& s) { return s.tableau.stages * s.steps; },
                        [&](const auto&) { return loop_count(strategy); },
                    },
                    strategy);
}

std::string strategy_name(const Strategy& strategy) {
  return std::visit(overloaded{
                        [](const NaiveLoop&) -> std::string { return "naive"; },
                        [](const Euler&) -> std::string { return "euler"; },
                        [](const EulerSched&) -> std::string { return "euler_sched"; },
                        [](const RkGeneric& s) -> std::string { return s.label; },
                        [](const RkAnchored&) -> std::string { return "rk_anchored"; },
                        [](const HeavyBall&) -> std::string { return "heavy_ball"; },
                        [](const Anderson&) -> std::string { return "anderson"; },
                        [](const Aitken&) -> std::string { return "aitken"; },
                        [](const UniformLoop&) -> std::string { return "uniform"; },
                        [](const NormStab&) -> std::string { return "norm_stab"; },
                        [](const PolyBlend&) -> std::string { return "poly_blend"; },
                    },
                    strategy);
}

std::string strategy_params(const Strategy& strategy) {
  return std::visit(overloaded{
                        [](const NaiveLoop&) -> std::string { return ""; },
                        [](const Euler& s) -> std::string { return "alpha=" + fmt(s.step()); },
                        [](const EulerSched& s) -> std::string { return "alphas=" + fmt_list(s.alphas); },
                        [](const RkGeneric& s) -> std::string { return "h=" + fmt(s.h) + ";s=" + fmt(s.tableau.stages); },
                        [](const RkAnchored& s) -> std::string { return "beta=" + fmt(s.beta); },
                        [](const HeavyBall& s) -> std::string { return "alpha=" + fmt(s.alpha) + ";beta=" + fmt(s.beta); },
                        [](const Anderson& s) -> std::string { return "m=" + fmt(static_cast<double>(s.m)) + ";beta=" + fmt(s.beta); },
                        [](const Aitken& s) -> std::string { return s.safeguard ? "safeguarded" : "raw"; },
                        [](const UniformLoop&) -> std::string { return ""; },
                        [](const NormStab& s) -> std::string { return "alpha=" + fmt(s.alpha); },
                        [](const PolyBlend& s) -> std::string { return "w=" + fmt_list(s.weights); },
                    },
                    strategy);
}

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : j.items()) {
    bool ok = key == "name";
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("strategy '" + j.at("name").get<std::string>() + "': unknown key '" + key + "'");
  }
}

ButcherTableau tableau_from_json(const nlohmann::json& j) {
  ButcherTableau t;
  t.b = j.at("b").get<std::vector<double>>();
  t.stages = t.b.size();
  const auto rows = j.at("a").get<std::vector<std::vector<double>>>();
  if (rows.size() != t.stages) throw ConfigError("tableau: 'a' must have one row per stage");
  for (const auto& r : rows) {
    if (r.size() != t.stages) throw ConfigError("tableau: 'a' rows must have one entry per stage");
    t.a.insert(t.a.end(), r.begin(), r.end());
  }
  return t;
}

}  // namespace

Strategy strategy_from_json(const nlohmann::json& j, std::optional<std::size_t> default_K) {
  if (!j.is_object() || !j.contains("name")) throw ConfigError("strategy: expected an object with a 'name'");
  Strategy out;
  try {
    const auto name = j.at("name").get<std::string>();
    auto K = [&]() -> std::size_t {
      if (j.contains("K")) return j.at("K").get<std::size_t>();
      if (default_K) return *default_K;
      throw ConfigError("strategy '" + name + "': missing K");
    };
    if (name == "naive") {
      reject_unknown(j, {"K"});
      out = NaiveLoop{K()};
    } else if (name == "euler") {
      reject_unknown(j, {"K", "alpha"});
      Euler e{K(), std::nullopt};
      if (j.contains("alpha")) e.alpha = j.at("alpha").get<double>();
      out = e;
    } else if (name == "euler_sched") {
      reject_unknown(j, {"alphas"});
      out = EulerSched{j.at("alphas").get<std::vector<double>>()};
    } else if (name == "midpoint" || name == "heun" || name == "rk4") {
      reject_unknown(j, {"K"});
      out = name == "midpoint" ? midpoint_strategy(K()) : name == "heun" ? heun_strategy(K()) : rk4_strategy(K());
    } else if (name == "rk_generic") {
      reject_unknown(j, {"tableau", "h", "steps"});
      out = RkGeneric{tableau_from_json(j.at("tableau")), j.value("h", 1.0), j.value("steps", std::size_t{1}),
                      "rk_generic"};
    } else if (name == "rk_anchored") {
      reject_unknown(j, {"K", "beta"});
      out = RkAnchored{K(), j.value("beta", 0.5)};
    } else if (name == "heavy_ball") {
      reject_unknown(j, {"K", "alpha", "beta"});
      const std::size_t k = K();
      out = HeavyBall{k, j.value("alpha", 1.0 / static_cast<double>(k)), j.value("beta", 0.0)};
    } else if (name == "anderson") {
      reject_unknown(j, {"K", "m", "beta"});
      out = Anderson{K(), j.value("m", std::size_t{2}), j.value("beta", 0.5)};
    } else if (name == "aitken") {
      reject_unknown(j, {"K", "safeguard"});
      out = Aitken{K(), j.value("safeguard", true)};
    } else if (name == "uniform") {
      reject_unknown(j, {"K"});
      out = UniformLoop{K()};
    } else if (name == "norm_stab") {
      reject_unknown(j, {"K", "alpha"});
      const std::size_t k = K();
      out = NormStab{k, j.value("alpha", 1.0 / static_cast<double>(k))};
    } else if (name == "poly_blend") {
      reject_unknown(j, {"weights"});
      out = PolyBlend{j.at("weights").get<std::vector<double>>()};
    } else {
      throw ConfigError("unknown strategy '" + name + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("strategy: ") + e.what());
  }
  validate(out);
  return out;
}

nlohmann::json to_json(const Strategy& strategy) {
  return std::visit(
      overloaded{
          [](const NaiveLoop& s) { return nlohmann::json{{"name", "naive"}, {"K", s.K}}; },
          [](const Euler& s) {
            nlohmann::json j{{"name", "euler"}, {"K", s.K}};
            if (s.alpha) j["alpha"] = *s.alpha;
            return j;
          },
          [](const EulerSched& s) { return nlohmann::json{{"name", "euler_sched"}, {"alphas", s.alphas}}; },
          [](const RkGeneric& s) {
            if (s.label != "rk_generic") return nlohmann::json{{"name", s.label}, {"K", s.steps}};
            std::vector<std::vector<double>> rows;
            for (std::size_t i = 0; i < s.tableau.stages; ++i)
              rows.emplace_back(s.tableau.a.begin() + i * s.tableau.stages,
                                s.tableau.a.begin() + (i + 1) * s.tableau.stages);
            return nlohmann::json{{"name", "rk_generic"},
                                  {"tableau", {{"a", rows}, {"b", s.tableau.b}}},
                                  {"h", s.h},
                                  {"steps", s.steps}};
          },
          [](const RkAnchored& s) { return nlohmann::json{{"name", "rk_anchored"}, {"K", s.K}, {"beta", s.beta}}; },
          [](const HeavyBall& s) {
            return nlohmann::json{{"name", "heavy_ball"}, {"K", s.K}, {"alpha", s.alpha}, {"beta", s.beta}};
          },
          [](const Anderson& s) {
            return nlohmann::json{{"name", "anderson"}, {"K", s.K}, {"m", s.m}, {"beta", s.beta}};
          },
          [](const Aitken& s) { return nlohmann::json{{"name", "aitken"}, {"K", s.K}, {"safeguard", s.safeguard}}; },
          [](const UniformLoop& s) { return nlohmann::json{{"name", "uniform"}, {"K", s.K}}; },
          [](const NormStab& s) { return nlohmann::json{{"name", "norm_stab"}, {"K", s.K}, {"alpha", s.alpha}}; },
          [](const PolyBlend& s) { return nlohmann::json{{"name", "poly_blend"}, {"weights", s.weights}}; },
      },
      strategy);
}

}  // namespace loopstack
