#pragma once

// Raw per-ISA kernel entry points. Callers outside numerics/ and the
// equivalence tests should use kernels.hpp.

#include <cstddef>

namespace loopstack::kernels::scalar {
double dot_f32(const float* a, const float* b, std::size_t n) noexcept;
double dot_f64(const double* a, const double* b, std::size_t n) noexcept;
void axpy_f64(double alpha, const double* x, double* y, std::size_t n) noexcept;
void axpy_f32_to_f64(double alpha, const float* x, double* y, std::size_t n) noexcept;
}  // namespace loopstack::kernels::scalar

namespace loopstack::kernels::avx2 {
double dot_f32(const float* a, const float* b, std::size_t n) noexcept;
double dot_f64(const double* a, const double* b, std::size_t n) noexcept;
void axpy_f64(double alpha, const double* x, double* y, std::size_t n) noexcept;
void axpy_f32_to_f64(double alpha, const float* x, double* y, std::size_t n) noexcept;
}  // namespace loopstack::kernels::avx2
