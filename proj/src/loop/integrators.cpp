#include "loopstack/loop/integrators.hpp"

#include <cmath>
#include <string>

#include "loopstack/error.hpp"
#include "loopstack/numerics/kernels.hpp"

namespace loopstack {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

void add_scaled(State& y, double alpha, const State& x) { kernels::axpy(alpha, x.flat(), y.flat()); }

State eval(const WindowOp& g, const State& x) {
  State y = g(x);
  require_same_shape(x, y, "window operator output");
  return y;
}

void check(const State& x, const char* who, std::size_t k) {
  if (!x.all_finite())
    throw NumericError(std::string(who) + ": non-finite iterate at iteration " + std::to_string(k));
}

// Solves the small SPD system in place by Gaussian elimination with partial
// pivoting; returns false on a zero pivot.
bool solve_dense(std::vector<double>& A, std::vector<double>& rhs, std::size_t n) {
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(A[r * n + c]) > std::abs(A[piv * n + c])) piv = r;
    if (A[piv * n + c] == 0.0) return false;
    if (piv != c) {
      for (std::size_t k = 0; k < n; ++k) std::swap(A[c * n + k], A[piv * n + k]);
      std::swap(rhs[c], rhs[piv]);
    }
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = A[r * n + c] / A[c * n + c];
      for (std::size_t k = c; k < n; ++k) A[r * n + k] -= f * A[c * n + k];
      rhs[r] -= f * rhs[c];
    }
  }
  for (std::size_t c = n; c-- > 0;) {
    double s = rhs[c];
    for (std::size_t k = c + 1; k < n; ++k) s -= A[c * n + k] * rhs[k];
    rhs[c] = s / A[c * n + c];
  }
  return true;
}

State euler_step(const State& x, const WindowOp& g, double alpha) {
  const State F = residual(x, eval(g, x));
  State next = x;
  add_scaled(next, alpha, F);
  return next;
}

void rescale_rows(State& x, const std::vector<double>& norms) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double n = std::sqrt(kernels::dot(x.row(r), x.row(r)));
    if (n > 0.0) {
      const double s = norms[r] / n;
      for (double& v : x.row(r)) v *= s;
    }
  }
}

}  // namespace

WindowOp counted(WindowOp g, std::size_t& counter) {
  return [g = std::move(g), &counter](const State& x) {
    ++counter;
    return g(x);
  };
}

State residual(const State& x, const State& gx) {
  require_same_shape(x, gx, "residual");
  State F(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) F.flat()[i] = gx.flat()[i] - x.flat()[i];
  return F;
}

State rk_generic(const State& x0, const WindowOp& g, const ButcherTableau& tab, double h, std::size_t steps) {
  tab.validate();
  State x = x0;
  std::vector<State> k(tab.stages);
  for (std::size_t n = 0; n < steps; ++n) {
    for (std::size_t i = 0; i < tab.stages; ++i) {
      State y = x;
      for (std::size_t j = 0; j < i; ++j)
        if (tab.coeff(i, j) != 0.0) add_scaled(y, h * tab.coeff(i, j), k[j]);
      k[i] = residual(y, eval(g, y));
    }
    State incr(x.rows(), x.cols());
    for (std::size_t i = 0; i < tab.stages; ++i)
      if (tab.b[i] != 0.0) add_scaled(incr, tab.b[i], k[i]);
    add_scaled(x, h, incr);
    check(x, "rk_generic", n + 1);
  }
  return x;
}

State rk_anchored(const State& x0, const WindowOp& g, std::size_t K, double beta) {
  if (K == 0) throw ConfigError("rk_anchored: K must be >= 1");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("rk_anchored: beta must lie in [0,1]");
  const double alpha = 1.0 / static_cast<double>(K);
  const State anchor = eval(g, x0);
  State x = x0;
  add_scaled(x, alpha, residual(x0, anchor));
  for (std::size_t k = 1; k < K; ++k) {
    x = euler_step(x, g, alpha);
    check(x, "rk_anchored", k + 1);
  }
  State out = anchor;
  for (double& v : out.flat()) v *= beta;
  add_scaled(out, 1.0 - beta, x);
  return out;
}

std::vector<double> anderson_gamma(const std::deque<State>& dF, const State& f) {
  const std::size_t n = dF.size();
  std::vector<double> A(n * n), rhs(n);
  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) A[i * n + j] = A[j * n + i] = kernels::dot(dF[i].flat(), dF[j].flat());
    rhs[i] = kernels::dot(dF[i].flat(), f.flat());
    trace += A[i * n + i];
  }
  if (!(trace > 0.0)) return std::vector<double>(n, 0.0);
  const double ridge = 1e-8 * trace;
  for (std::size_t i = 0; i < n; ++i) A[i * n + i] += ridge;
  if (!solve_dense(A, rhs, n)) return std::vector<double>(n, 0.0);
  return rhs;
}

State AndersonState::step(const State& x, const State& gx, double beta) {
  const State f = residual(x, gx);
  if (has_prev_) {
    dX_.push_back(residual(x_prev_, x));
    dF_.push_back(residual(f_prev_, f));
    if (dX_.size() > m_) {
      dX_.pop_front();
      dF_.pop_front();
    }
  }
  State next = x;
  add_scaled(next, beta, f);
  gamma_ = anderson_gamma(dF_, f);
  // (1-beta)(x - dX gamma) + beta (g(x) - dG gamma) with dG = dX + dF
  for (std::size_t j = 0; j < dX_.size(); ++j) {
    add_scaled(next, -gamma_[j], dX_[j]);
    add_scaled(next, -gamma_[j] * beta, dF_[j]);
  }
  x_prev_ = x;
  f_prev_ = f;
  has_prev_ = true;
  return next;
}

State aitken_step(const State& x, const State& gx, const State& ggx, bool safeguard) {
  require_same_shape(x, gx, "aitken_step");
  require_same_shape(x, ggx, "aitken_step");
  State out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x.flat()[i];
    const double d1 = gx.flat()[i] - xi;
    const double d2 = ggx.flat()[i] - 2.0 * gx.flat()[i] + xi;
    double move;
    if (std::abs(d2) < 1e-8 * (1.0 + std::abs(d1))) {
      move = d1;
    } else {
      move = -(d1 * d1) / d2;
      if (safeguard && std::abs(move) > std::abs(d1)) move = std::copysign(std::abs(d1), move);
    }
    out.flat()[i] = xi + move;
  }
  return out;
}

State UniformState::mean() const {
  State m = sum_;
  const double inv = 1.0 / static_cast<double>(count_);
  for (double& v : m.flat()) v *= inv;
  return m;
}

void UniformState::push(const State& x) {
  add_scaled(sum_, 1.0, x);
  ++count_;
}

State uniform_loop_step(UniformState& state, const WindowOp& g) {
  State next = eval(g, state.mean());
  state.push(next);
  return next;
}

State apply_strategy(const State& x0, const WindowOp& g, const Strategy& strategy) {
  validate(strategy);
  return std::visit(
      overloaded{
          [&](const NaiveLoop& s) {
            State x = x0;
            for (std::size_t k = 0; k < s.K; ++k) {
              x = eval(g, x);
              check(x, "naive", k + 1);
            }
            return x;
          },
          [&](const Euler& s) {
            State x = x0;
            for (std::size_t k = 0; k < s.K; ++k) {
              x = euler_step(x, g, s.step());
              check(x, "euler", k + 1);
            }
            return x;
          },
          [&](const EulerSched& s) {
            State x = x0;
            for (std::size_t k = 0; k < s.alphas.size(); ++k) {
              x = euler_step(x, g, s.alphas[k]);
              check(x, "euler_sched", k + 1);
            }
            return x;
          },
          [&](const RkGeneric& s) { return rk_generic(x0, g, s.tableau, s.h, s.steps); },
          [&](const RkAnchored& s) { return rk_anchored(x0, g, s.K, s.beta); },
          [&](const HeavyBall& s) {
            State x = x0;
            State prev = x0;
            for (std::size_t k = 0; k < s.K; ++k) {
              State next = euler_step(x, g, s.alpha);
              add_scaled(next, s.beta, residual(prev, x));
              prev = std::move(x);
              x = std::move(next);
              check(x, "heavy_ball", k + 1);
            }
            return x;
          },
          [&](const Anderson& s) {
            AndersonState st(s.m);
            State x = x0;
            for (std::size_t k = 0; k < s.K; ++k) {
              x = st.step(x, eval(g, x), s.beta);
              check(x, "anderson", k + 1);
            }
            return x;
          },
          [&](const Aitken& s) {
            State x = x0;
            for (std::size_t k = 0; k < s.K / 2; ++k) {
              const State gx = eval(g, x);
              const State ggx = eval(g, gx);
              x = aitken_step(x, gx, ggx, s.safeguard);
              check(x, "aitken", k + 1);
            }
            return x;
          },
          [&](const UniformLoop& s) {
            UniformState st(x0);
            State x = x0;
            for (std::size_t k = 0; k < s.K; ++k) {
              x = uniform_loop_step(st, g);
              check(x, "uniform", k + 1);
            }
            return x;
          },
          [&](const NormStab& s) {
            std::vector<double> norms(x0.rows());
            for (std::size_t r = 0; r < x0.rows(); ++r) norms[r] = std::sqrt(kernels::dot(x0.row(r), x0.row(r)));
            State x = x0;
            for (std::size_t k = 0; k < s.K; ++k) {
              x = euler_step(x, g, s.alpha);
              rescale_rows(x, norms);
              check(x, "norm_stab", k + 1);
            }
            return x;
          },
          [&](const PolyBlend& s) {
            State x = x0;
            State out(x0.rows(), x0.cols());
            add_scaled(out, s.weights[0], x);
            for (std::size_t k = 1; k < s.weights.size(); ++k) {
              x = eval(g, x);
              check(x, "poly_blend", k);
              add_scaled(out, s.weights[k], x);
            }
            return out;
          },
      },
      strategy);
}

}  // namespace loopstack
