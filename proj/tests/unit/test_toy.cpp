#include <algorithm>
#include <cmath>
#include <utility>

#include <doctest.h>

#include "loopstack/error.hpp"
#include "loopstack/toy/toy_net.hpp"

using namespace loopstack;
using namespace loopstack::toy;

namespace {

ToyConfig small_config() {
  ToyConfig c;
  c.n_train = 64;
  c.n_test = 32;
  c.hidden = 6;
  c.steps = 200;
  return c;
}

}  // namespace

TEST_CASE("hand gradients match finite differences") {
  const ToyConfig cfg = small_config();
  const ToyDataset d = make_toy_dataset(cfg, 3);
  const ToyNet net = make_toy_net(cfg.hidden, 4);
  const GradCheck gc = toy_grad_check(net, d.x_train, d.y_train);
  CHECK(gc.max_rel_error <= 1e-5);

  const ToyTrainResult trained = toy_train(cfg, d, 4);
  CHECK(toy_grad_check(trained.net, d.x_train, d.y_train).max_rel_error <= 1e-5);
}

TEST_CASE("zero post layer and zero targets give zero gradients") {
  const ToyConfig cfg = small_config();
  const ToyDataset d = make_toy_dataset(cfg, 5);
  ToyNet net = make_toy_net(cfg.hidden, 6);
  for (double& v : net.post_w.flat()) v = 0.0;
  for (double& v : net.post_b.flat()) v = 0.0;
  Matrix<double> y(d.y_train.rows(), 2);
  ToyNet grad = zeros_like(net);
  CHECK(toy_loss_and_grad(net, d.x_train, y, grad) == 0.0);
  visit_params(std::as_const(grad), [](const std::string& name, std::span<const double> g) {
    for (double v : g) CHECK_MESSAGE(v == 0.0, name);
  });
}

TEST_CASE("K=1 loops collapse to the baseline") {
  const ToyConfig cfg = small_config();
  const ToyDataset d = make_toy_dataset(cfg, 7);
  const ToyNet net = make_toy_net(cfg.hidden, 8);
  const double base = toy_eval(net, d.x_test, d.y_test, LoopKind::baseline());
  CHECK(toy_eval(net, d.x_test, d.y_test, LoopKind::naive(1)) == base);
  CHECK(toy_eval(net, d.x_test, d.y_test, LoopKind::substep(1)) == base);
  const Vec2 z{0.3, -0.2};
  CHECK(toy_endpoint(net, z, LoopKind::naive(2)) == toy_block(net, toy_block(net, z)));
}

TEST_CASE("substep endpoints are damped euler on the block residual") {
  const ToyNet net = make_toy_net(5, 9);
  const Vec2 z0{0.1, 0.4};
  Vec2 z = z0;
  for (int k = 0; k < 4; ++k) {
    const Vec2 g = toy_block(net, z);
    z = {z[0] + 0.25 * (g[0] - z[0]), z[1] + 0.25 * (g[1] - z[1])};
  }
  const Vec2 e = toy_endpoint(net, z0, LoopKind::substep(4));
  CHECK(e[0] == doctest::Approx(z[0]).epsilon(1e-14));
  CHECK(e[1] == doctest::Approx(z[1]).epsilon(1e-14));
}

TEST_CASE("training lowers the loss and stays finite") {
  const ToyConfig cfg = small_config();
  const ToyDataset d = make_toy_dataset(cfg, 10);
  const ToyTrainResult r = toy_train(cfg, d, 11);
  REQUIRE(r.losses.size() == cfg.steps + 1);
  CHECK(r.losses.back() < r.losses.front());
  for (double l : r.losses) CHECK(std::isfinite(l));

  ToyConfig wild = cfg;
  wild.lr = 1e6;
  CHECK_THROWS_AS(toy_train(wild, d, 11), NumericError);
}

TEST_CASE("dataset is seeded") {
  const ToyConfig cfg = small_config();
  CHECK(make_toy_dataset(cfg, 1).x_train == make_toy_dataset(cfg, 1).x_train);
  CHECK_FALSE(make_toy_dataset(cfg, 1).x_train == make_toy_dataset(cfg, 2).x_train);
  const ToyDataset d = make_toy_dataset(cfg, 1);
  for (double v : d.x_train.flat()) CHECK((v >= -1.0 && v <= 1.0));
}

TEST_CASE("loss grid shape, centres and medians") {
  const ToyNet net = make_toy_net(4, 12);
  Matrix<double> y(3, 2);
  y(0, 0) = 0.0;
  y(1, 0) = 1.0;
  y(2, 0) = 5.0;
  const GridBounds b{-1.0, 1.0, -2.0, 2.0};
  const LossGrid g = toy_grid(net, y, b, 220, 2);
  CHECK(g.median_loss.size() == 48400u);
  CHECK(g.center(0, 0)[0] == doctest::Approx(-1.0 + 1.0 / 220));
  CHECK(g.center(219, 219)[1] == doctest::Approx(2.0 - 2.0 / 220));
  CHECK(toy_grid(net, y, b, 220, 1).median_loss == g.median_loss);

  // Median of three squared errors is the middle one.
  const Vec2 c = g.center(17, 140);
  const Vec2 p = toy_post(net, c);
  std::vector<double> errs;
  for (std::size_t i = 0; i < 3; ++i) errs.push_back(std::pow(p[0] - y(i, 0), 2) + std::pow(p[1] - y(i, 1), 2));
  std::sort(errs.begin(), errs.end());
  CHECK(g.median_loss[140 * 220 + 17] == doctest::Approx(errs[1]).epsilon(1e-12));
  CHECK(g.loss_at(c) == g.median_loss[140 * 220 + 17]);

  CHECK_THROWS(toy_grid(net, y, GridBounds{1.0, 1.0, 0.0, 1.0}, 10));
  CHECK_THROWS(toy_grid(net, y, b, 0));
}

TEST_CASE("post preimage and covering bounds") {
  const ToyNet net = make_toy_net(4, 13);
  const Vec2 target{0.4, -0.7};
  const Vec2 z = post_preimage(net, target);
  const Vec2 back = toy_post(net, z);
  CHECK(back[0] == doctest::Approx(target[0]).epsilon(1e-10));
  CHECK(back[1] == doctest::Approx(target[1]).epsilon(1e-10));

  const std::vector<ScatterPoint> pts{{2, LoopKind::Kind::naive, 0, {0.0, 0.0}}, {2, LoopKind::Kind::substep, 0, {1.0, 2.0}}};
  const std::vector<Vec2> extra{{-1.0, 0.5}};
  const GridBounds b = covering_bounds(pts, extra, 0.1);
  CHECK(b.z1_min == doctest::Approx(-1.2));
  CHECK(b.z1_max == doctest::Approx(1.2));
  CHECK(b.z2_min == doctest::Approx(-0.2));
  CHECK(b.z2_max == doctest::Approx(2.2));
}

TEST_CASE("scatter lists naive and substep endpoints for every K") {
  const ToyConfig cfg = small_config();
  const ToyDataset d = make_toy_dataset(cfg, 14);
  const ToyNet net = make_toy_net(cfg.hidden, 15);
  const std::vector<std::size_t> Ks{2, 4};
  const auto pts = toy_scatter(net, d.x_test, Ks);
  CHECK(pts.size() == 2 * 2 * cfg.n_test);
  const std::string csv = scatter_csv(pts);
  CHECK(csv.rfind("K,kind,point_index,z1,z2\n", 0) == 0);
  CHECK(grid_csv(toy_grid(net, d.y_test, GridBounds{}, 4)).rfind("z1,z2,median_loss\n", 0) == 0);
}
