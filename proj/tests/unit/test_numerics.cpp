#include <cmath>
#include <numbers>

#include <doctest.h>

#include "loopstack/error.hpp"
#include "loopstack/numerics/kernels.hpp"
#include "loopstack/numerics/kernels_impl.hpp"
#include "loopstack/numerics/rng.hpp"
#include "support.hpp"

using namespace loopstack;
namespace kn = loopstack::kernels;

namespace {

struct IsaGuard {
  ~IsaGuard() { kn::clear_forced_isa(); }
};

// Summation-order bound for a double-accumulated length-n dot product.
double dot_tolerance(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(double(a[i]) * double(b[i]));
  return 4.0 * static_cast<double>(a.size()) * 1.2e-16 * s + 1e-300;
}

}  // namespace

TEST_CASE("scalar and avx2 dot agree up to summation order") {
  if (!kn::avx2_available()) return;
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 15u, 16u, 33u, 257u, 1000u}) {
    const auto a = test::random_matrix<float>(1, n, 100 + n);
    const auto b = test::random_matrix<float>(1, n, 200 + n);
    const double s = kn::scalar::dot_f32(a.data(), b.data(), n);
    const double v = kn::avx2::dot_f32(a.data(), b.data(), n);
    CHECK(std::abs(s - v) <= dot_tolerance(a.flat(), b.flat()));

    const auto ad = test::random_matrix<double>(1, n, 300 + n);
    const auto bd = test::random_matrix<double>(1, n, 400 + n);
    CHECK(std::abs(kn::scalar::dot_f64(ad.data(), bd.data(), n) - kn::avx2::dot_f64(ad.data(), bd.data(), n)) <=
          1e-12 * (1.0 + static_cast<double>(n)));
  }
}

TEST_CASE("scalar and avx2 axpy are bit-identical") {
  if (!kn::avx2_available()) return;
  for (std::size_t n : {1u, 5u, 8u, 13u, 64u, 129u}) {
    const auto x = test::random_matrix<double>(1, n, n);
    const auto xf = test::random_matrix<float>(1, n, n + 1);
    auto y1 = test::random_matrix<double>(1, n, n + 2);
    auto y2 = y1;
    kn::scalar::axpy_f64(0.37, x.data(), y1.data(), n);
    kn::avx2::axpy_f64(0.37, x.data(), y2.data(), n);
    CHECK(y1 == y2);
    kn::scalar::axpy_f32_to_f64(-1.3, xf.data(), y1.data(), n);
    kn::avx2::axpy_f32_to_f64(-1.3, xf.data(), y2.data(), n);
    CHECK(y1 == y2);
  }
}

TEST_CASE("deterministic mode and forcing select the scalar path") {
  IsaGuard guard;
  kn::set_deterministic(true);
  CHECK(kn::active_isa() == kn::Isa::scalar);
  kn::set_deterministic(false);
  kn::force_isa(kn::Isa::scalar);
  CHECK(kn::active_isa() == kn::Isa::scalar);
  kn::clear_forced_isa();
  if (kn::avx2_available()) CHECK(kn::active_isa() == kn::Isa::avx2);
}

TEST_CASE("matmul matches a triple loop in long double") {
  IsaGuard guard;
  const auto a = test::random_matrix<float>(7, 13, 1);
  const auto b = test::random_matrix<float>(13, 5, 2);
  for (kn::Isa isa : {kn::Isa::scalar, kn::Isa::avx2}) {
    if (isa == kn::Isa::avx2 && !kn::avx2_available()) continue;
    kn::force_isa(isa);
    const auto c = kn::matmul(a, b);
    REQUIRE(c.rows() == 7);
    REQUIRE(c.cols() == 5);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        long double s = 0;
        for (std::size_t k = 0; k < 13; ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
        CHECK(std::abs(static_cast<double>(c(i, j)) - static_cast<double>(s)) <=
              1e-6 * (1.0 + std::abs(static_cast<double>(s))));
      }
  }
  CHECK_THROWS_AS(kn::matmul(a, a), ShapeError);
}

TEST_CASE("linear is x times w transposed") {
  const auto x = test::random_matrix<float>(3, 4, 5);
  const auto w = test::random_matrix<float>(6, 4, 6);
  const auto y = kn::linear(x, w);
  REQUIRE(y.rows() == 3);
  REQUIRE(y.cols() == 6);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t o = 0; o < 6; ++o) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += double(x(i, k)) * w(o, k);
      CHECK(y(i, o) == doctest::Approx(s).epsilon(1e-6));
    }
}

TEST_CASE("rms_norm matches a 64-bit oracle") {
  const auto x = test::random_matrix<float>(1, 48, 9, 3.0);
  const auto g = test::random_matrix<float>(1, 48, 10);
  const float eps = 1e-6f;
  const std::vector<float> y = kn::rms_norm(x.flat(), g.flat(), eps);
  double ms = 0;
  for (float v : x.flat()) ms += double(v) * v;
  const double inv = 1.0 / std::sqrt(ms / 48.0 + eps);
  for (std::size_t i = 0; i < 48; ++i) CHECK(y[i] == doctest::Approx(double(x.flat()[i]) * inv * g.flat()[i]).epsilon(1e-6));

  const std::vector<float> zeros(8, 0.0f), ones(8, 1.0f);
  for (float v : kn::rms_norm(zeros, ones, eps)) CHECK(v == 0.0f);
}

TEST_CASE("softmax sums to one and is shift invariant") {
  const std::vector<float> x{1.0f, 2.0f, 3.0f, -50.0f};
  const auto p = kn::softmax(x);
  double s = 0;
  for (float v : p) s += v;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  std::vector<float> shifted = x;
  for (float& v : shifted) v += 1000.0f;
  const auto q = kn::softmax(shifted);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(p[i] == doctest::Approx(q[i]).epsilon(1e-6));
  CHECK(p[2] == doctest::Approx(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0) + std::exp(-50.0))));
}

TEST_CASE("rope rotates each pair by position times frequency") {
  const std::size_t hd = 8;
  Matrix<float> x(3, 16);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 16; c += 2) x(r, c) = 1.0f;  // unit vector along the first pair axis
  const std::size_t pos = 5;
  const auto y = kn::rope_rotate(x, pos, 10000.0, hd);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t h = 0; h < 16; h += hd)
      for (std::size_t j = 0; j < hd / 2; ++j) {
        const double angle = double(pos + r) * std::pow(10000.0, -2.0 * double(j) / double(hd));
        CHECK(y(r, h + 2 * j) == doctest::Approx(std::cos(angle)).epsilon(1e-6));
        CHECK(y(r, h + 2 * j + 1) == doctest::Approx(std::sin(angle)).epsilon(1e-6));
      }

  // Position 0 is the identity; relative positions alone set q.k.
  const auto q = test::random_matrix<float>(1, hd, 21);
  const auto k = test::random_matrix<float>(1, hd, 22);
  CHECK(kn::rope_rotate(q, 0, 10000.0, hd) == q);
  auto dot_at = [&](std::size_t m, std::size_t n) {
    return kn::dot(kn::rope_rotate(q, m, 10000.0, hd).flat(), kn::rope_rotate(k, n, 10000.0, hd).flat());
  };
  CHECK(dot_at(7, 3) == doctest::Approx(dot_at(104, 100)).epsilon(1e-5));
  CHECK_THROWS_AS(kn::rope_rotate(q, 0, 10000.0, 3), ShapeError);
}

TEST_CASE("silu closed form") {
  CHECK(kn::silu(0.0f) == 0.0f);
  CHECK(kn::silu(2.0f) == doctest::Approx(2.0 / (1.0 + std::exp(-2.0))));
  CHECK(kn::silu(-30.0f) == doctest::Approx(-30.0 / (1.0 + std::exp(30.0))));
}

TEST_CASE("rng is reproducible and roughly normal") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(Rng(42).next_u64() != c.next_u64());
  // SplitMix64 reference value for seed 0.
  CHECK(Rng(0).next_u64() == 0xE220A8397B1DCDAFull);

  Rng r(7);
  double m = 0, v = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    m += z;
    v += z * z;
  }
  m /= n;
  v = v / n - m * m;
  CHECK(std::abs(m) < 0.01);
  CHECK(std::abs(v - 1.0) < 0.02);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    CHECK(r.below(7) < 7);
  }
}
