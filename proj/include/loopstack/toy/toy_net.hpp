#pragma once

// Tiny trainable network with a 2-D bottleneck: pre (R^4 -> R^2, tanh),
// three residual layers z + W2 tanh(W1 z + b1) + b2, post (R^2 -> R^2,
// affine). The residual block is the loop window; everything runs in double.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "loopstack/numerics/matrix.hpp"

namespace loopstack::toy {

using Vec2 = std::array<double, 2>;

struct ToyResidual {
  Matrix<double> w1;  // hidden x 2
  Matrix<double> b1;  // 1 x hidden
  Matrix<double> w2;  // 2 x hidden
  Matrix<double> b2;  // 1 x 2
};

struct ToyNet {
  Matrix<double> pre_w;  // 2 x 4
  Matrix<double> pre_b;  // 1 x 2
  std::array<ToyResidual, 3> layers;
  Matrix<double> post_w;  // 2 x 2
  Matrix<double> post_b;  // 1 x 2

  std::size_t hidden() const noexcept { return layers[0].w1.rows(); }
  std::size_t parameter_count() const;
};

/// Calls fn(name, values) for every parameter tensor in a fixed order.
void visit_params(ToyNet& net, const std::function<void(const std::string&, std::span<double>)>& fn);
void visit_params(const ToyNet& net, const std::function<void(const std::string&, std::span<const double>)>& fn);

ToyNet make_toy_net(std::size_t hidden, std::uint64_t seed);
ToyNet zeros_like(const ToyNet& net);

struct ToyConfig {
  std::size_t n_train = 2048;
  std::size_t n_test = 512;
  double noise = 0.05;
  std::size_t hidden = 16;
  double lr = 1e-2;
  std::size_t steps = 5000;
  /// Steps excluded from the monotone-decrease check.
  std::size_t warmup = 50;
};

struct ToyDataset {
  Matrix<double> x_train, y_train;  // n x 4, n x 2
  Matrix<double> x_test, y_test;
};

/// y = (sin(w1.x), tanh(w2.x)) + N(0, noise^2), x uniform in [-1, 1]^4.
ToyDataset make_toy_dataset(const ToyConfig& cfg, std::uint64_t seed);

Vec2 toy_pre(const ToyNet& net, std::span<const double> x);
Vec2 toy_residual(const ToyResidual& layer, const Vec2& z);
/// The window g: the three residual layers in order.
Vec2 toy_block(const ToyNet& net, const Vec2& z);
Vec2 toy_post(const ToyNet& net, const Vec2& z);

/// Mean over rows of ||post(block(pre(x))) - y||^2.
double toy_loss(const ToyNet& net, const Matrix<double>& x, const Matrix<double>& y);
/// Same loss; writes d loss / d params into grad (shaped like net).
double toy_loss_and_grad(const ToyNet& net, const Matrix<double>& x, const Matrix<double>& y, ToyNet& grad);

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst_param;
};

/// Central finite differences with step h on every parameter. The relative
/// error is |g - fd| / max(|g| + |fd|, floor).
GradCheck toy_grad_check(const ToyNet& net, const Matrix<double>& x, const Matrix<double>& y, double h = 1e-6,
                         double floor = 1e-6);

struct ToyTrainResult {
  ToyNet net;
  std::vector<double> losses;  // training loss before each step, plus the final one
};

/// Full-batch gradient descent with the hand-written backward pass. Throws
/// NumericError naming the step when the loss stops being finite.
ToyTrainResult toy_train(const ToyConfig& cfg, const ToyDataset& data, std::uint64_t seed);

struct LoopKind {
  enum class Kind { baseline, naive, substep };
  Kind kind = Kind::baseline;
  std::size_t K = 1;

  static LoopKind baseline() { return {}; }
  static LoopKind naive(std::size_t K) { return {Kind::naive, K}; }
  static LoopKind substep(std::size_t K) { return {Kind::substep, K}; }
};

std::string to_string(const LoopKind& k);

/// Bottleneck endpoint fed to post: g(z), g^K(z), or K damped Euler steps.
Vec2 toy_endpoint(const ToyNet& net, const Vec2& z0, const LoopKind& kind);
std::vector<Vec2> toy_endpoints(const ToyNet& net, const Matrix<double>& x, const LoopKind& kind);
double toy_eval(const ToyNet& net, const Matrix<double>& x, const Matrix<double>& y, const LoopKind& kind);

struct GridBounds {
  double z1_min = -1, z1_max = 1, z2_min = -1, z2_max = 1;
};

struct LossGrid {
  GridBounds bounds;
  std::size_t resolution = 0;
  std::vector<double> median_loss;  // row-major, index = i2 * resolution + i1

  double cell_width() const { return (bounds.z1_max - bounds.z1_min) / static_cast<double>(resolution); }
  double cell_height() const { return (bounds.z2_max - bounds.z2_min) / static_cast<double>(resolution); }
  Vec2 center(std::size_t i1, std::size_t i2) const;
  /// Loss of the cell containing z (clamped to the grid).
  double loss_at(const Vec2& z) const;
};

/// Per-cell median over test points of ||post(z) - y_i||^2. `threads` = 0
/// means one worker.
LossGrid toy_grid(const ToyNet& net, const Matrix<double>& y_test, const GridBounds& bounds, std::size_t resolution,
                  std::size_t threads = 1);

struct ScatterPoint {
  std::size_t K = 0;
  LoopKind::Kind kind = LoopKind::Kind::naive;
  std::size_t point_index = 0;
  Vec2 z{};
};

std::vector<ScatterPoint> toy_scatter(const ToyNet& net, const Matrix<double>& x_test, std::span<const std::size_t> Ks);

/// Bounding box of the points and `extra`, padded by `pad` of each side.
GridBounds covering_bounds(std::span<const ScatterPoint> points, std::span<const Vec2> extra, double pad = 0.05);

/// z with post(z) = y (post_w must be invertible).
Vec2 post_preimage(const ToyNet& net, const Vec2& y);

std::string grid_csv(const LossGrid& grid);
std::string scatter_csv(std::span<const ScatterPoint> points);

}  // namespace loopstack::toy
