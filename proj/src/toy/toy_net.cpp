#include "loopstack/toy/toy_net.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <thread>

#include "loopstack/error.hpp"
#include "loopstack/numerics/rng.hpp"

namespace loopstack::toy {

namespace {

// Fixed projections of the synthetic task.
constexpr std::array<double, 4> kW1{0.9, -0.7, 0.6, 0.4};
constexpr std::array<double, 4> kW2{-0.5, 0.8, 0.3, -0.9};

Matrix<double> normal_matrix(std::size_t r, std::size_t c, double stddev, Rng& rng) {
  Matrix<double> m(r, c);
  for (double& v : m.flat()) v = rng.normal(0.0, stddev);
  return m;
}

template <typename Net, typename Fn>
void visit_impl(Net& net, Fn&& fn) {
  fn("pre_w", net.pre_w.flat());
  fn("pre_b", net.pre_b.flat());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    fn(p + "w1", net.layers[l].w1.flat());
    fn(p + "b1", net.layers[l].b1.flat());
    fn(p + "w2", net.layers[l].w2.flat());
    fn(p + "b2", net.layers[l].b2.flat());
  }
  fn("post_w", net.post_w.flat());
  fn("post_b", net.post_b.flat());
}

void check_xy(const Matrix<double>& x, const Matrix<double>& y) {
  if (x.cols() != 4 || y.cols() != 2 || x.rows() != y.rows() || x.rows() == 0)
    throw ShapeError("toy: expected n x 4 inputs and n x 2 targets");
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::size_t ToyNet::parameter_count() const {
  std::size_t n = 0;
  visit_params(*this, [&](const std::string&, std::span<const double> p) { n += p.size(); });
  return n;
}

void visit_params(ToyNet& net, const std::function<void(const std::string&, std::span<double>)>& fn) {
  visit_impl(net, fn);
}

void visit_params(const ToyNet& net, const std::function<void(const std::string&, std::span<const double>)>& fn) {
  visit_impl(net, fn);
}

ToyNet make_toy_net(std::size_t hidden, std::uint64_t seed) {
  if (hidden == 0) throw ConfigError("toy: hidden width must be positive");
  Rng rng(seed);
  ToyNet net;
  net.pre_w = normal_matrix(2, 4, 0.5, rng);
  net.pre_b = Matrix<double>(1, 2);
  for (ToyResidual& l : net.layers) {
    l.w1 = normal_matrix(hidden, 2, 1.0, rng);
    l.b1 = normal_matrix(1, hidden, 0.5, rng);
    l.w2 = normal_matrix(2, hidden, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
    l.b2 = Matrix<double>(1, 2);
  }
  net.post_w = normal_matrix(2, 2, 1.0, rng);
  net.post_b = Matrix<double>(1, 2);
  return net;
}

ToyNet zeros_like(const ToyNet& net) {
  ToyNet z = net;
  visit_params(z, [](const std::string&, std::span<double> p) { std::fill(p.begin(), p.end(), 0.0); });
  return z;
}

ToyDataset make_toy_dataset(const ToyConfig& cfg, std::uint64_t seed) {
  if (cfg.n_train == 0 || cfg.n_test == 0) throw ConfigError("toy: empty split");
  Rng rng(seed);
  auto fill = [&](std::size_t n, Matrix<double>& x, Matrix<double>& y) {
    x = Matrix<double>(n, 4);
    y = Matrix<double>(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
      double u1 = 0.0, u2 = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        x(i, j) = 2.0 * rng.uniform() - 1.0;
        u1 += kW1[j] * x(i, j);
        u2 += kW2[j] * x(i, j);
      }
      y(i, 0) = std::sin(u1) + rng.normal(0.0, cfg.noise);
      y(i, 1) = std::tanh(u2) + rng.normal(0.0, cfg.noise);
    }
  };
  ToyDataset d;
  fill(cfg.n_train, d.x_train, d.y_train);
  fill(cfg.n_test, d.x_test, d.y_test);
  return d;
}

Vec2 toy_pre(const ToyNet& net, std::span<const double> x) {
  Vec2 z{};
  for (std::size_t r = 0; r < 2; ++r) {
    double u = net.pre_b(0, r);
    for (std::size_t j = 0; j < 4; ++j) u += net.pre_w(r, j) * x[j];
    z[r] = std::tanh(u);
  }
  return z;
}

Vec2 toy_residual(const ToyResidual& l, const Vec2& z) {
  Vec2 out{z[0] + l.b2(0, 0), z[1] + l.b2(0, 1)};
  for (std::size_t h = 0; h < l.w1.rows(); ++h) {
    const double a = std::tanh(l.w1(h, 0) * z[0] + l.w1(h, 1) * z[1] + l.b1(0, h));
    out[0] += l.w2(0, h) * a;
    out[1] += l.w2(1, h) * a;
  }
  return out;
}

Vec2 toy_block(const ToyNet& net, const Vec2& z) {
  Vec2 out = z;
  for (const ToyResidual& l : net.layers) out = toy_residual(l, out);
  return out;
}

Vec2 toy_post(const ToyNet& net, const Vec2& z) {
  return {net.post_w(0, 0) * z[0] + net.post_w(0, 1) * z[1] + net.post_b(0, 0),
          net.post_w(1, 0) * z[0] + net.post_w(1, 1) * z[1] + net.post_b(0, 1)};
}

double toy_loss(const ToyNet& net, const Matrix<double>& x, const Matrix<double>& y) {
  return toy_eval(net, x, y, LoopKind::baseline());
}

double toy_loss_and_grad(const ToyNet& net, const Matrix<double>& x, const Matrix<double>& y, ToyNet& grad) {
  check_xy(x, y);
  grad = zeros_like(net);
  const std::size_t n = x.rows();
  const std::size_t H = net.hidden();
  const double inv_n = 1.0 / static_cast<double>(n);
  constexpr std::size_t L = 3;

  std::array<Vec2, L + 1> z{};
  std::array<std::vector<double>, L> act;
  for (auto& a : act) a.resize(H);
  double loss = 0.0;

  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = x.row(i);
    z[0] = toy_pre(net, xi);
    for (std::size_t l = 0; l < L; ++l) {
      const ToyResidual& p = net.layers[l];
      Vec2 next{z[l][0] + p.b2(0, 0), z[l][1] + p.b2(0, 1)};
      for (std::size_t h = 0; h < H; ++h) {
        const double a = std::tanh(p.w1(h, 0) * z[l][0] + p.w1(h, 1) * z[l][1] + p.b1(0, h));
        act[l][h] = a;
        next[0] += p.w2(0, h) * a;
        next[1] += p.w2(1, h) * a;
      }
      z[l + 1] = next;
    }
    const Vec2 yhat = toy_post(net, z[L]);
    const Vec2 err{yhat[0] - y(i, 0), yhat[1] - y(i, 1)};
    loss += err[0] * err[0] + err[1] * err[1];

    const Vec2 gy{2.0 * err[0] * inv_n, 2.0 * err[1] * inv_n};
    for (std::size_t r = 0; r < 2; ++r) {
      grad.post_b(0, r) += gy[r];
      for (std::size_t c = 0; c < 2; ++c) grad.post_w(r, c) += gy[r] * z[L][c];
    }
    Vec2 gz{net.post_w(0, 0) * gy[0] + net.post_w(1, 0) * gy[1], net.post_w(0, 1) * gy[0] + net.post_w(1, 1) * gy[1]};

    for (std::size_t l = L; l-- > 0;) {
      const ToyResidual& p = net.layers[l];
      ToyResidual& g = grad.layers[l];
      g.b2(0, 0) += gz[0];
      g.b2(0, 1) += gz[1];
      Vec2 gz_in = gz;
      for (std::size_t h = 0; h < H; ++h) {
        const double a = act[l][h];
        g.w2(0, h) += gz[0] * a;
        g.w2(1, h) += gz[1] * a;
        const double gh = (p.w2(0, h) * gz[0] + p.w2(1, h) * gz[1]) * (1.0 - a * a);
        g.b1(0, h) += gh;
        g.w1(h, 0) += gh * z[l][0];
        g.w1(h, 1) += gh * z[l][1];
        gz_in[0] += p.w1(h, 0) * gh;
        gz_in[1] += p.w1(h, 1) * gh;
      }
      gz = gz_in;
    }

    for (std::size_t r = 0; r < 2; ++r) {
      const double gu = gz[r] * (1.0 - z[0][r] * z[0][r]);
      grad.pre_b(0, r) += gu;
      for (std::size_t j = 0; j < 4; ++j) grad.pre_w(r, j) += gu * xi[j];
    }
  }
  return loss * inv_n;
}

GradCheck toy_grad_check(const ToyNet& net, const Matrix<double>& x, const Matrix<double>& y, double h,
                         double floor) {
  ToyNet grad;
  toy_loss_and_grad(net, x, y, grad);
  std::vector<std::pair<std::string, std::vector<double>>> analytic;
  visit_params(grad, [&](const std::string& name, std::span<const double> g) {
    analytic.emplace_back(name, std::vector<double>(g.begin(), g.end()));
  });

  GradCheck out;
  ToyNet probe = net;
  std::size_t t = 0;
  visit_params(probe, [&](const std::string& name, std::span<double> p) {
    const std::vector<double>& g = analytic[t++].second;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double saved = p[k];
      p[k] = saved + h;
      const double lp = toy_loss(probe, x, y);
      p[k] = saved - h;
      const double lm = toy_loss(probe, x, y);
      p[k] = saved;
      const double fd = (lp - lm) / (2.0 * h);
      const double rel = std::abs(g[k] - fd) / std::max(std::abs(g[k]) + std::abs(fd), floor);
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst_param = name + "[" + std::to_string(k) + "]";
      }
    }
  });
  return out;
}

ToyTrainResult toy_train(const ToyConfig& cfg, const ToyDataset& data, std::uint64_t seed) {
  if (!(cfg.lr > 0.0)) throw ConfigError("toy: learning rate must be positive");
  ToyTrainResult res{make_toy_net(cfg.hidden, seed), {}};
  res.losses.reserve(cfg.steps + 1);
  ToyNet grad;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const double loss = toy_loss_and_grad(res.net, data.x_train, data.y_train, grad);
    if (!std::isfinite(loss)) throw NumericError("toy_train: loss diverged at step " + std::to_string(step));
    res.losses.push_back(loss);
    std::vector<std::span<const double>> gs;
    visit_params(grad, [&](const std::string&, std::span<const double> g) { gs.push_back(g); });
    std::size_t t = 0;
    visit_params(res.net, [&](const std::string&, std::span<double> p) {
      const auto g = gs[t++];
      for (std::size_t k = 0; k < p.size(); ++k) p[k] -= cfg.lr * g[k];
    });
  }
  const double final_loss = toy_loss(res.net, data.x_train, data.y_train);
  if (!std::isfinite(final_loss)) throw NumericError("toy_train: loss diverged at step " + std::to_string(cfg.steps));
  res.losses.push_back(final_loss);
  return res;
}

std::string to_string(const LoopKind& k) {
  switch (k.kind) {
    case LoopKind::Kind::baseline: return "baseline";
    case LoopKind::Kind::naive: return "naive";
    case LoopKind::Kind::substep: return "substep";
  }
  return "?";
}

Vec2 toy_endpoint(const ToyNet& net, const Vec2& z0, const LoopKind& kind) {
  if (kind.K == 0) throw ConfigError("toy: K must be positive");
  switch (kind.kind) {
    case LoopKind::Kind::baseline: return toy_block(net, z0);
    case LoopKind::Kind::naive: {
      Vec2 z = z0;
      for (std::size_t k = 0; k < kind.K; ++k) z = toy_block(net, z);
      return z;
    }
    case LoopKind::Kind::substep: {
      const double step = 1.0 / static_cast<double>(kind.K);
      Vec2 z = z0;
      for (std::size_t k = 0; k < kind.K; ++k) {
        const Vec2 g = toy_block(net, z);
        z = {z[0] + step * (g[0] - z[0]), z[1] + step * (g[1] - z[1])};
      }
      return z;
    }
  }
  return z0;
}

std::vector<Vec2> toy_endpoints(const ToyNet& net, const Matrix<double>& x, const LoopKind& kind) {
  std::vector<Vec2> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = toy_endpoint(net, toy_pre(net, x.row(i)), kind);
  return out;
}

double toy_eval(const ToyNet& net, const Matrix<double>& x, const Matrix<double>& y, const LoopKind& kind) {
  check_xy(x, y);
  double sum = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const Vec2 yhat = toy_post(net, toy_endpoint(net, toy_pre(net, x.row(i)), kind));
    const double e0 = yhat[0] - y(i, 0), e1 = yhat[1] - y(i, 1);
    sum += e0 * e0 + e1 * e1;
  }
  return sum / static_cast<double>(x.rows());
}

Vec2 LossGrid::center(std::size_t i1, std::size_t i2) const {
  return {bounds.z1_min + (static_cast<double>(i1) + 0.5) * cell_width(),
          bounds.z2_min + (static_cast<double>(i2) + 0.5) * cell_height()};
}

double LossGrid::loss_at(const Vec2& z) const {
  auto index = [&](double v, double lo, double w) {
    const double f = std::floor((v - lo) / w);
    return static_cast<std::size_t>(std::clamp(f, 0.0, static_cast<double>(resolution - 1)));
  };
  const std::size_t i1 = index(z[0], bounds.z1_min, cell_width());
  const std::size_t i2 = index(z[1], bounds.z2_min, cell_height());
  return median_loss[i2 * resolution + i1];
}

LossGrid toy_grid(const ToyNet& net, const Matrix<double>& y_test, const GridBounds& bounds, std::size_t resolution,
                  std::size_t threads) {
  if (resolution == 0) throw ConfigError("toy_grid: resolution must be positive");
  if (!(bounds.z1_max > bounds.z1_min) || !(bounds.z2_max > bounds.z2_min) || !std::isfinite(bounds.z1_min) ||
      !std::isfinite(bounds.z1_max) || !std::isfinite(bounds.z2_min) || !std::isfinite(bounds.z2_max))
    throw ConfigError("toy_grid: degenerate bounds");
  if (y_test.cols() != 2 || y_test.rows() == 0) throw ShapeError("toy_grid: expected n x 2 targets");

  LossGrid grid{bounds, resolution, std::vector<double>(resolution * resolution)};
  const std::size_t n = y_test.rows();
  auto work = [&](std::size_t first_row, std::size_t stride) {
    std::vector<double> losses(n);
    for (std::size_t i2 = first_row; i2 < resolution; i2 += stride) {
      for (std::size_t i1 = 0; i1 < resolution; ++i1) {
        const Vec2 yhat = toy_post(net, grid.center(i1, i2));
        for (std::size_t i = 0; i < n; ++i) {
          const double e0 = yhat[0] - y_test(i, 0), e1 = yhat[1] - y_test(i, 1);
          losses[i] = e0 * e0 + e1 * e1;
        }
        // Median of an even count is the mean of the two middle values.
        auto mid = losses.begin() + static_cast<std::ptrdiff_t>(n / 2);
        std::nth_element(losses.begin(), mid, losses.end());
        double med = *mid;
        if (n % 2 == 0) med = 0.5 * (med + *std::max_element(losses.begin(), mid));
        grid.median_loss[i2 * resolution + i1] = med;
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, resolution));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(work, t, workers);
  work(0, workers);
  for (auto& th : pool) th.join();
  return grid;
}

std::vector<ScatterPoint> toy_scatter(const ToyNet& net, const Matrix<double>& x_test,
                                      std::span<const std::size_t> Ks) {
  std::vector<ScatterPoint> out;
  for (std::size_t K : Ks) {
    for (LoopKind::Kind kind : {LoopKind::Kind::naive, LoopKind::Kind::substep}) {
      const std::vector<Vec2> ends = toy_endpoints(net, x_test, LoopKind{kind, K});
      for (std::size_t i = 0; i < ends.size(); ++i) out.push_back({K, kind, i, ends[i]});
    }
  }
  return out;
}

GridBounds covering_bounds(std::span<const ScatterPoint> points, std::span<const Vec2> extra, double pad) {
  GridBounds b{INFINITY, -INFINITY, INFINITY, -INFINITY};
  auto add = [&](const Vec2& z) {
    b.z1_min = std::min(b.z1_min, z[0]);
    b.z1_max = std::max(b.z1_max, z[0]);
    b.z2_min = std::min(b.z2_min, z[1]);
    b.z2_max = std::max(b.z2_max, z[1]);
  };
  for (const ScatterPoint& p : points) add(p.z);
  for (const Vec2& z : extra) add(z);
  if (!std::isfinite(b.z1_min)) throw ConfigError("covering_bounds: no points");
  const double p1 = std::max(pad * (b.z1_max - b.z1_min), 1e-3);
  const double p2 = std::max(pad * (b.z2_max - b.z2_min), 1e-3);
  return {b.z1_min - p1, b.z1_max + p1, b.z2_min - p2, b.z2_max + p2};
}

Vec2 post_preimage(const ToyNet& net, const Vec2& y) {
  const double a = net.post_w(0, 0), b = net.post_w(0, 1), c = net.post_w(1, 0), d = net.post_w(1, 1);
  const double det = a * d - b * c;
  if (std::abs(det) < 1e-12) throw NumericError("post_preimage: post layer is singular");
  const double r0 = y[0] - net.post_b(0, 0), r1 = y[1] - net.post_b(0, 1);
  return {(d * r0 - b * r1) / det, (a * r1 - c * r0) / det};
}

std::string grid_csv(const LossGrid& grid) {
  std::string out = "z1,z2,median_loss\n";
  for (std::size_t i2 = 0; i2 < grid.resolution; ++i2)
    for (std::size_t i1 = 0; i1 < grid.resolution; ++i1) {
      const Vec2 c = grid.center(i1, i2);
      out += fmt(c[0]) + "," + fmt(c[1]) + "," + fmt(grid.median_loss[i2 * grid.resolution + i1]) + "\n";
    }
  return out;
}

std::string scatter_csv(std::span<const ScatterPoint> points) {
  std::string out = "K,kind,point_index,z1,z2\n";
  for (const ScatterPoint& p : points)
    out += std::to_string(p.K) + "," + to_string(LoopKind{p.kind, p.K}) + "," + std::to_string(p.point_index) + "," +
           fmt(p.z[0]) + "," + fmt(p.z[1]) + "\n";
  return out;
}

}  // namespace loopstack::toy
