#pragma once

// Dense kernels shared by the transformer runtime and the loop engine.
//
// Reductions accumulate in double regardless of storage type. Every kernel has
// a scalar reference implementation; on x86-64 an AVX2 variant is selected at
// runtime when the CPU supports it and deterministic mode is off. The two
// agree bit-for-bit on elementwise kernels and to a relative 1e-12 on
// reductions (only summation order differs).

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "loopstack/numerics/matrix.hpp"

namespace loopstack::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa) noexcept;

/// True when the AVX2 variant was compiled in and the CPU reports avx2+fma.
bool avx2_available() noexcept;

/// Serial scalar kernels only; makes results bit-reproducible across machines.
void set_deterministic(bool on) noexcept;
bool deterministic() noexcept;

/// Overrides runtime selection (tests). Requesting avx2 on a machine without
/// it falls back to scalar.
void force_isa(Isa isa) noexcept;
void clear_forced_isa() noexcept;
Isa active_isa() noexcept;

double dot(std::span<const float> a, std::span<const float> b);
double dot(std::span<const double> a, std::span<const double> b);

/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void axpy(double alpha, std::span<const float> x, std::span<double> y);

/// Standard product a (m x k) * b (k x n).
Matrix<float> matmul(const Matrix<float>& a, const Matrix<float>& b);
Matrix<double> matmul(const Matrix<double>& a, const Matrix<double>& b);

/// x (T x in) * w^T with w stored as (out x in), the layout of every weight
/// in the model.
Matrix<float> linear(const Matrix<float>& x, const Matrix<float>& w);

/// y_j = gain_j * x_j / sqrt(mean(x^2) + eps)
void rms_norm(std::span<const float> x, std::span<const float> gain, float eps, std::span<float> out);
std::vector<float> rms_norm(std::span<const float> x, std::span<const float> gain, float eps);
/// Row-wise rms_norm of a T x d matrix.
Matrix<float> rms_norm_rows(const Matrix<float>& x, std::span<const float> gain, float eps);

std::vector<float> softmax(std::span<const float> x);
/// In-place, for attention scores.
void softmax_inplace(std::span<double> x);

/// Rotary embedding. Row r of x is treated as position `position + r`; each
/// row is split into heads of `head_dim` and pairs (2j, 2j+1) inside a head
/// are rotated by (position + r) * base^(-2j/head_dim).
Matrix<float> rope_rotate(const Matrix<float>& x, std::size_t position, double base, std::size_t head_dim);

float silu(float x) noexcept;

}  // namespace loopstack::kernels
