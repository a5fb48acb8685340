#include <cmath>
#include <complex>

#include <doctest.h>

#include "loopstack/error.hpp"
#include "loopstack/loop/looped_model.hpp"
#include "support.hpp"

using namespace loopstack;

namespace {

State scalar(double v) { return State(1, 1, v); }

// g(x) = a x + c on every coordinate.
WindowOp affine(double a, double c) {
  return [a, c](const State& x) {
    State y = x;
    for (double& v : y.flat()) v = a * v + c;
    return y;
  };
}

// g(x) = x + F(x) for F(x) = -x.
WindowOp decay() { return affine(0.0, 0.0); }

// g(x) = x + A x with A the 90 degree rotation generator; flow is exp(tA).
WindowOp rotation() {
  return [](const State& x) {
    State y = x;
    y(0, 0) = x(0, 0) - x(0, 1);
    y(0, 1) = x(0, 1) + x(0, 0);
    return y;
  };
}

double decay_error(const Strategy& s) { return std::abs(apply_strategy(scalar(1.0), decay(), s)(0, 0) - std::exp(-1.0)); }

double rotation_error(const Strategy& s) {
  State x0(1, 2);
  x0(0, 0) = 1.0;
  const State y = apply_strategy(x0, rotation(), s);
  return std::hypot(y(0, 0) - std::cos(1.0), y(0, 1) - std::sin(1.0));
}

LoopConfig config(LoopWindow w, Strategy s, IterationMode mode = IterationMode::block) {
  LoopConfig c;
  c.window = w;
  c.strategy = std::move(s);
  c.mode = mode;
  return c;
}

}  // namespace

TEST_CASE("euler on a decaying scalar field") {
  CHECK(apply_strategy(scalar(1.0), decay(), Euler{2, std::nullopt})(0, 0) == doctest::Approx(0.25).epsilon(1e-15));
  for (std::size_t K : {1u, 3u, 7u})
    CHECK(apply_strategy(scalar(1.0), decay(), Euler{K, std::nullopt})(0, 0) ==
          doctest::Approx(std::pow(1.0 - 1.0 / double(K), double(K))).epsilon(1e-14));
}

TEST_CASE("rk4 single step and heun two steps have their closed forms") {
  const double rk4 = apply_strategy(scalar(1.0), decay(), rk4_strategy(1))(0, 0);
  CHECK(rk4 == doctest::Approx(0.375).epsilon(1e-15));
  CHECK(std::abs(rk4 - std::exp(-1.0)) < std::abs(0.0 - std::exp(-1.0)));
  CHECK(apply_strategy(scalar(1.0), decay(), heun_strategy(2))(0, 0) == doctest::Approx(0.390625).epsilon(1e-15));
  CHECK(rk_generic(scalar(1.0), decay(), ButcherTableau::heun(), 0.5, 2)(0, 0) ==
        doctest::Approx(0.390625).epsilon(1e-15));
}

TEST_CASE("midpoint and heun agree on a linear field") {
  for (std::size_t K : {1u, 2u, 5u}) {
    CHECK(std::abs(apply_strategy(scalar(1.0), decay(), midpoint_strategy(K))(0, 0) -
                   apply_strategy(scalar(1.0), decay(), heun_strategy(K))(0, 0)) <= 1e-12);
    State x0(1, 2);
    x0(0, 0) = 0.3;
    x0(0, 1) = -1.1;
    CHECK(max_abs_diff(apply_strategy(x0, rotation(), midpoint_strategy(K)),
                       apply_strategy(x0, rotation(), heun_strategy(K))) <= 1e-12);
  }
}

TEST_CASE("convergence orders on analytic fields") {
  for (auto err : {decay_error, rotation_error}) {
    const double euler = err(Euler{16, std::nullopt}) / err(Euler{32, std::nullopt});
    CHECK(euler >= 1.7);
    CHECK(euler <= 2.3);
    const double rk4 = err(rk4_strategy(4)) / err(rk4_strategy(8));
    CHECK(rk4 >= 10.0);
    CHECK(rk4 <= 24.0);
    for (const auto& make : {midpoint_strategy, heun_strategy}) {
      const double r = err(make(8)) / err(make(16));
      CHECK(r >= 3.4);
      CHECK(r <= 4.6);
    }
  }
}

TEST_CASE("tableau validation and presets") {
  ButcherTableau implicit = ButcherTableau::heun();
  implicit.a[0] = 0.5;
  CHECK_THROWS_AS(implicit.validate(), ConfigError);
  const ButcherTableau t = ButcherTableau::anchored(2, 0.5);
  CHECK(t.b == std::vector<double>{0.75, 0.25});
  CHECK(t.coeff(1, 0) == 0.5);
  CHECK(t.coeff(0, 0) == 0.0);
}

TEST_CASE("single-stage unit tableau is one application of g") {
  const auto g = affine(0.7, 0.2);
  CHECK(rk_generic(scalar(0.4), g, ButcherTableau::forward_euler(), 1.0, 1) == g(scalar(0.4)));
}

TEST_CASE("anchored rk limits and tableau equivalence") {
  const auto g = affine(0.3, 1.1);
  const State x0 = scalar(-0.8);
  CHECK(rk_anchored(x0, g, 4, 1.0) == g(x0));
  CHECK(rk_anchored(x0, g, 4, 0.0) == apply_strategy(x0, g, Euler{4, std::nullopt}));
  for (std::size_t K : {2u, 3u, 4u})
    for (double beta : {0.0, 0.25, 0.5, 1.0})
      CHECK(std::abs(rk_anchored(x0, g, K, beta)(0, 0) -
                     rk_generic(x0, g, ButcherTableau::anchored(K, beta), 1.0, 1)(0, 0)) <= 1e-12);
}

TEST_CASE("heavy ball with zero momentum is euler") {
  const auto g = affine(-0.4, 0.9);
  CHECK(apply_strategy(scalar(2.0), g, HeavyBall{5, 0.3, 0.0}) == apply_strategy(scalar(2.0), g, Euler{5, 0.3}));
  // One step with x_{-1} = x_0 has no momentum either.
  CHECK(apply_strategy(scalar(2.0), g, HeavyBall{1, 0.3, 0.9}) == apply_strategy(scalar(2.0), g, Euler{1, 0.3}));
}

TEST_CASE("anderson") {
  const auto g = affine(0.5, 1.0);
  AndersonState st(1);
  const State x1 = st.step(scalar(0.0), g(scalar(0.0)), 1.0);
  CHECK(x1(0, 0) == doctest::Approx(1.0));
  const State x2 = st.step(x1, g(x1), 1.0);
  CHECK(x2(0, 0) == doctest::Approx(2.0).epsilon(1e-7));
  CHECK(apply_strategy(scalar(0.0), g, Anderson{2, 1, 1.0})(0, 0) == doctest::Approx(2.0).epsilon(1e-7));

  // No history: plain mixing.
  AndersonState fresh(3);
  CHECK(fresh.step(scalar(0.0), scalar(1.0), 0.4)(0, 0) == doctest::Approx(0.4));

  // One column: scalar projection.
  const std::deque<State> dF{State(1, 3, std::vector<double>{1.0, 2.0, -1.0})};
  const State f(1, 3, std::vector<double>{0.5, 0.1, 0.3});
  const double expect = (0.5 * 1.0 + 0.1 * 2.0 - 0.3) / 6.0;
  CHECK(anderson_gamma(dF, f)[0] == doctest::Approx(expect).epsilon(1e-7));
  CHECK(anderson_gamma({State(1, 3)}, f) == std::vector<double>{0.0});

  // History depth never exceeds m.
  AndersonState deep(2);
  State x = scalar(0.0);
  for (int k = 0; k < 6; ++k) {
    x = deep.step(x, g(x), 0.5);
    CHECK(deep.depth() <= 2);
  }
}

TEST_CASE("aitken") {
  // g(x) = 0.5 x + 1 from 0: d1 = 1, d2 = -0.5.
  const auto g = affine(0.5, 1.0);
  const State x = scalar(0.0), gx = g(x), ggx = g(gx);
  CHECK(aitken_step(x, gx, ggx, false)(0, 0) == doctest::Approx(2.0));
  CHECK(aitken_step(x, gx, ggx, true)(0, 0) == doctest::Approx(1.0));  // move clipped to |d1|
  // From a point where the extrapolated move is within |d1| the safeguard is inactive.
  const auto steep = affine(-0.5, 3.0);
  const State y = scalar(0.0), gy = steep(y), ggy = steep(gy);
  CHECK(aitken_step(y, gy, ggy, true)(0, 0) == doctest::Approx(2.0));

  CHECK(aitken_step(scalar(2.0), scalar(2.0), scalar(2.0))(0, 0) == 2.0);
  // d2 == 0: falls back to x + d1.
  CHECK(aitken_step(scalar(1.0), scalar(1.5), scalar(2.0))(0, 0) == 1.5);

  CHECK_THROWS_AS(validate(Strategy{Aitken{3, true}}), ConfigError);
}

TEST_CASE("uniform loop") {
  const auto g = affine(0.5, 1.0);
  UniformState st(scalar(0.0));
  const State x1 = uniform_loop_step(st, g);
  CHECK(x1 == g(scalar(0.0)));
  const State x2 = uniform_loop_step(st, g);
  CHECK(x2(0, 0) == doctest::Approx(0.5 * 0.5 + 1.0));  // g(mean(0, 1))
  const State fixed = scalar(2.0);
  CHECK(apply_strategy(fixed, g, UniformLoop{4}) == apply_strategy(fixed, g, NaiveLoop{4}));
}

TEST_CASE("norm stab keeps row norms") {
  const auto g = [](const State& x) {
    State y = x;
    for (double& v : y.flat()) v = 3.0 * v + 0.5;
    return y;
  };
  State x0(2, 3, std::vector<double>{1, 2, 2, 0, 3, 4});
  const State y = apply_strategy(x0, g, NormStab{3, 0.5});
  for (std::size_t r = 0; r < 2; ++r) {
    double n0 = 0, n1 = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      n0 += x0(r, c) * x0(r, c);
      n1 += y(r, c) * y(r, c);
    }
    CHECK(std::sqrt(n1) == doctest::Approx(std::sqrt(n0)).epsilon(1e-12));
  }
}

TEST_CASE("poly blend") {
  const auto g = affine(0.5, 1.0);
  CHECK(apply_strategy(scalar(0.0), g, PolyBlend{{0.0, 0.0, 1.0}}) == apply_strategy(scalar(0.0), g, NaiveLoop{2}));
  CHECK(apply_strategy(scalar(0.0), g, PolyBlend{{0.5, 0.5}})(0, 0) == doctest::Approx(0.5));
  CHECK_THROWS_AS(validate(Strategy{PolyBlend{{0.5, 0.4}}}), ConfigError);
}

TEST_CASE("forward-pass counts follow the strategy table") {
  const auto g = affine(0.9, 0.1);
  const std::size_t K = 6;
  const std::vector<std::pair<Strategy, std::size_t>> cases{
      {NaiveLoop{K}, K},
      {Euler{K, std::nullopt}, K},
      {EulerSched{{0.1, 0.2, 0.3}}, 3},
      {midpoint_strategy(K), 2 * K},
      {heun_strategy(K), 2 * K},
      {rk4_strategy(K), 4 * K},
      {RkGeneric{ButcherTableau::rk4(), 0.5, 3, "custom"}, 12},
      {RkAnchored{K, 0.3}, K},
      {HeavyBall{K, 0.5, 0.2}, K},
      {Anderson{K, 3, 0.5}, K},
      {Aitken{K, true}, K},
      {UniformLoop{K}, K},
      {NormStab{K, 0.5}, K},
      {PolyBlend{{0.1, 0.2, 0.3, 0.4}}, 3},
  };
  for (const auto& [s, expected] : cases) {
    std::size_t count = 0;
    apply_strategy(scalar(1.0), counted(g, count), s);
    INFO(strategy_name(s));
    CHECK(count == expected);
    CHECK(expected_forward_passes(s) == expected);
  }
}

TEST_CASE("strategy json") {
  using nlohmann::json;
  const Strategy e = strategy_from_json(json{{"name", "euler"}, {"K", 3}});
  CHECK(std::get<Euler>(e).K == 3);
  CHECK(std::get<Anderson>(strategy_from_json(json{{"name", "anderson"}, {"m", 3}, {"beta", 1.0}}, 8)).K == 8);
  CHECK_THROWS_AS(strategy_from_json(json{{"name", "euler"}, {"K", 3}, {"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(strategy_from_json(json{{"name", "nope"}, {"K", 3}}), ConfigError);
  CHECK_THROWS_AS(strategy_from_json(json{{"name", "rk_anchored"}, {"K", 2}, {"beta", 1.5}}), ConfigError);
  for (const Strategy& s : {Strategy{NaiveLoop{2}}, Strategy{Aitken{4, false}}, Strategy{PolyBlend{{0.25, 0.75}}},
                            Strategy{rk4_strategy(3)}, Strategy{HeavyBall{3, 0.4, 0.2}}}) {
    const Strategy back = strategy_from_json(to_json(s));
    CHECK(strategy_name(back) == strategy_name(s));
    CHECK(strategy_params(back) == strategy_params(s));
    CHECK(loop_count(back) == loop_count(s));
  }
}

TEST_CASE("default window") {
  CHECK(default_window(28, 4, 0.5) == LoopWindow{12, 15});
  CHECK(default_window(36, 4, 0.46) == LoopWindow{15, 18});
  CHECK(default_window(6, 6) == LoopWindow{0, 5});
  CHECK(default_window(3, 4) == LoopWindow{0, 2});
  CHECK(default_window(10, 1, 0.0) == LoopWindow{0, 0});
  CHECK(default_window(10, 1, 1.0) == LoopWindow{9, 9});
  CHECK_THROWS_AS((LoopWindow{3, 2}.validate(8)), ConfigError);
  CHECK_THROWS_AS((LoopWindow{2, 8}.validate(8)), ConfigError);
}

TEST_CASE("window operator and residual field on a model") {
  const Model model = make_random_model(test::dense_config(5), 31);
  const HiddenState x = test::random_matrix<float>(4, 32, 32);
  CHECK(window_operator(model, x, {2, 2}) == block_forward(x, model.layers[2], model.config));

  const LoopWindow w{1, 3};
  const HiddenState gx = window_operator(model, x, w);
  const State f = residual_field(model, x, w);
  State recon = x.cast<double>();
  for (std::size_t i = 0; i < recon.size(); ++i) recon.flat()[i] += f.flat()[i];
  CHECK(recon == gx.cast<double>());

  // Telescoping: F_g(x) is the sum of per-layer residuals along the chain.
  State sum(4, 32);
  HiddenState y = x;
  for (std::size_t i = w.a; i <= w.b; ++i) {
    const HiddenState next = block_forward(y, model.layers[i], model.config);
    for (std::size_t k = 0; k < sum.size(); ++k) sum.flat()[k] += double(next.flat()[k]) - double(y.flat()[k]);
    y = next;
  }
  CHECK(max_abs_diff(sum, f) <= 1e-5);

  Model pure = model;
  make_pure_residual(pure);
  CHECK(window_operator(pure, x, w) == x);
  CHECK(residual_field(pure, x, w).max_abs() == 0.0);
}

TEST_CASE("affine residual field closed form") {
  const auto g = affine(1.5, -0.25);
  const State x(1, 3, std::vector<double>{1.0, -2.0, 0.5});
  const State f = residual(x, g(x));
  for (std::size_t i = 0; i < 3; ++i) CHECK(f.flat()[i] == doctest::Approx(0.5 * x.flat()[i] - 0.25));
}

TEST_CASE("looped forward degenerations") {
  const Model model = make_random_model(test::dense_config(4), 41);
  const auto toks = test::tokens(5, 64, 42);
  const Matrix<float> base = model_forward(model, toks);
  for (IterationMode mode : {IterationMode::block, IterationMode::layer}) {
    CHECK(looped_forward(model, toks, config({1, 2}, NaiveLoop{1}, mode)) == base);
    CHECK(looped_forward(model, toks, config({0, 3}, NaiveLoop{1}, mode)) == base);
    CHECK(looped_forward(model, toks, config({1, 2}, RkAnchored{3, 1.0}, mode)) == base);
    CHECK(looped_forward(model, toks, config({1, 2}, RkGeneric{ButcherTableau::forward_euler(), 1.0, 1}, mode)) ==
          base);
  }
  const auto block2 = looped_forward(model, toks, config({0, 3}, NaiveLoop{2}));
  const auto layer2 = looped_forward(model, toks, config({0, 3}, NaiveLoop{2}, IterationMode::layer));
  CHECK(max_abs_diff(block2, layer2) > 1e-3);
  CHECK_THROWS_AS(looped_forward(model, toks, config({2, 4}, NaiveLoop{1})), ConfigError);
}

TEST_CASE("layer mode pins moe routing; block mode may thrash") {
  const Model model = make_random_model(test::moe_config(4, 32), 51);
  const auto toks = test::tokens(6, 64, 52);
  LoopTrace trace;
  looped_forward(model, toks, config({1, 2}, Euler{5, std::nullopt}, IterationMode::layer), &trace);
  for (std::size_t layer : {1u, 2u}) {
    REQUIRE(trace.routing[layer].size() == 5);
    for (const LayerRouting& r : trace.routing[layer]) CHECK(r == trace.routing[layer][0]);
  }
}
