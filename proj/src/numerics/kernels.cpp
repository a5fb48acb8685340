#include "loopstack/numerics/kernels.hpp"

#include <atomic>
#include <cmath>
#include <string>

#include "loopstack/numerics/kernels_impl.hpp"

namespace loopstack::kernels {

namespace {

std::atomic<bool> g_deterministic{false};
std::atomic<int> g_forced{-1};

struct Table {
  double (*dot_f32)(const float*, const float*, std::size_t) noexcept;
  double (*dot_f64)(const double*, const double*, std::size_t) noexcept;
  void (*axpy_f64)(double, const double*, double*, std::size_t) noexcept;
  void (*axpy_f32_to_f64)(double, const float*, double*, std::size_t) noexcept;
};

constexpr Table kScalar{scalar::dot_f32, scalar::dot_f64, scalar::axpy_f64, scalar::axpy_f32_to_f64};
#if defined(LOOPSTACK_BUILD_AVX2)
constexpr Table kAvx2{avx2::dot_f32, avx2::dot_f64, avx2::axpy_f64, avx2::axpy_f32_to_f64};
#endif

bool cpu_has_avx2() noexcept {
#if defined(LOOPSTACK_BUILD_AVX2) && (defined(__GNUC__) || defined(__clang__))
  static const bool has = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return has;
#else
  return false;
#endif
}

const Table& table() noexcept {
#if defined(LOOPSTACK_BUILD_AVX2)
  if (active_isa() == Isa::avx2) return kAvx2;
#endif
  return kScalar;
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept { return isa == Isa::avx2 ? "avx2" : "scalar"; }

bool avx2_available() noexcept { return cpu_has_avx2(); }

void set_deterministic(bool on) noexcept { g_deterministic.store(on, std::memory_order_relaxed); }
bool deterministic() noexcept { return g_deterministic.load(std::memory_order_relaxed); }

void force_isa(Isa isa) noexcept { g_forced.store(static_cast<int>(isa), std::memory_order_relaxed); }
void clear_forced_isa() noexcept { g_forced.store(-1, std::memory_order_relaxed); }

Isa active_isa() noexcept {
  const int forced = g_forced.load(std::memory_order_relaxed);
  if (forced >= 0) {
    const auto isa = static_cast<Isa>(forced);
    return (isa == Isa::avx2 && !cpu_has_avx2()) ? Isa::scalar : isa;
  }
  if (deterministic() || !cpu_has_avx2()) return Isa::scalar;
  return Isa::avx2;
}

double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  return table().dot_f32(a.data(), b.data(), a.size());
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  return table().dot_f64(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw ShapeError("axpy: length mismatch");
  table().axpy_f64(alpha, x.data(), y.data(), x.size());
}

void axpy(double alpha, std::span<const float> x, std::span<double> y) {
  if (x.size() != y.size()) throw ShapeError("axpy: length mismatch");
  table().axpy_f32_to_f64(alpha, x.data(), y.data(), x.size());
}

namespace {

template <typename T>
Matrix<T> transpose(const Matrix<T>& m) {
  Matrix<T> t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

template <typename T>
Matrix<T> matmul_impl(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " * " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  const Matrix<T> bt = transpose(b);
  Matrix<T> c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) = static_cast<T>(dot(a.row(i), bt.row(j)));
  return c;
}

}  // namespace

Matrix<float> matmul(const Matrix<float>& a, const Matrix<float>& b) { return matmul_impl(a, b); }
Matrix<double> matmul(const Matrix<double>& a, const Matrix<double>& b) { return matmul_impl(a, b); }

Matrix<float> linear(const Matrix<float>& x, const Matrix<float>& w) {
  if (x.cols() != w.cols()) {
    throw ShapeError("linear: input width " + std::to_string(x.cols()) + " vs weight " +
                     std::to_string(w.rows()) + "x" + std::to_string(w.cols()));
  }
  Matrix<float> y(x.rows(), w.rows());
  for (std::size_t t = 0; t < x.rows(); ++t)
    for (std::size_t o = 0; o < w.rows(); ++o) y(t, o) = static_cast<float>(dot(x.row(t), w.row(o)));
  return y;
}

void rms_norm(std::span<const float> x, std::span<const float> gain, float eps, std::span<float> out) {
  if (x.size() != gain.size() || x.size() != out.size()) throw ShapeError("rms_norm: length mismatch");
  if (x.empty()) return;
  const double ms = dot(x, x) / static_cast<double>(x.size());
  const double inv = 1.0 / std::sqrt(ms + static_cast<double>(eps));
  for (std::size_t j = 0; j < x.size(); ++j)
    out[j] = static_cast<float>(static_cast<double>(gain[j]) * static_cast<double>(x[j]) * inv);
}

std::vector<float> rms_norm(std::span<const float> x, std::span<const float> gain, float eps) {
  std::vector<float> out(x.size());
  rms_norm(x, gain, eps, out);
  return out;
}

Matrix<float> rms_norm_rows(const Matrix<float>& x, std::span<const float> gain, float eps) {
  Matrix<float> out(x.rows(), x.cols());
  for (std::size_t t = 0; t < x.rows(); ++t) rms_norm(x.row(t), gain, eps, out.row(t));
  return out;
}

std::vector<float> softmax(std::span<const float> x) {
  if (x.empty()) throw ShapeError("softmax: empty input");
  std::vector<double> tmp(x.begin(), x.end());
  softmax_inplace(tmp);
  return {tmp.begin(), tmp.end()};
}

void softmax_inplace(std::span<double> x) {
  if (x.empty()) return;
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  double sum = 0.0;
  for (double& v : x) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : x) v /= sum;
}

Matrix<float> rope_rotate(const Matrix<float>& x, std::size_t position, double base, std::size_t head_dim) {
  if (head_dim == 0 || head_dim % 2 != 0) throw ShapeError("rope_rotate: head_dim must be even");
  if (x.cols() % head_dim != 0) throw ShapeError("rope_rotate: width not a multiple of head_dim");
  Matrix<float> out = x;
  const std::size_t half = head_dim / 2;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double pos = static_cast<double>(position + r);
    for (std::size_t j = 0; j < half; ++j) {
      const double theta = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(head_dim));
      const double c = std::cos(pos * theta);
      const double s = std::sin(pos * theta);
      for (std::size_t h = 0; h < x.cols(); h += head_dim) {
        const double x0 = x(r, h + 2 * j);
        const double x1 = x(r, h + 2 * j + 1);
        out(r, h + 2 * j) = static_cast<float>(x0 * c - x1 * s);
        out(r, h + 2 * j + 1) = static_cast<float>(x0 * s + x1 * c);
      }
    }
  }
  return out;
}

float silu(float x) noexcept {
  const double d = x;
  return static_cast<float>(d / (1.0 + std::exp(-d)));
}

}  // namespace loopstack::kernels
