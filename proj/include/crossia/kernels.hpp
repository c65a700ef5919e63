#pragma once
// Dense double-precision kernels used by the encoder. Each kernel has a
// portable scalar reference and an AVX2/FMA variant; the variant is chosen
// once at startup from CPUID and can be pinned for equivalence testing.

#include <cstddef>
#include <span>
#include <string_view>

namespace crossia::kernels {

enum class Isa { kScalar, kAvx2 };

std::string_view to_string(Isa isa) noexcept;

// Best ISA the running CPU supports (honours CROSSIA_FORCE_SCALAR=1).
Isa detect_isa() noexcept;
bool isa_supported(Isa isa) noexcept;

Isa active_isa() noexcept;
// Throws invalid-argument if the CPU cannot run `isa`.
void set_active_isa(Isa isa);

double dot(std::span<const double> a, std::span<const double> b);
// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
// x *= alpha
void scale(double alpha, std::span<double> x);
double sum_squares(std::span<const double> x);

// Row-major GEMM accumulators, all of the form C += op(A) * op(B).
// nn: A[m][k], B[k][n];  nt: A[m][k], B[n][k];  tn: A[k][m], B[k][n].
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n) noexcept;
void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept;
void scale(double alpha, double* x, std::size_t n) noexcept;
double sum_squares(const double* x, std::size_t n) noexcept;
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define CROSSIA_HAVE_AVX2_KERNELS 1
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n) noexcept;
void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept;
void scale(double alpha, double* x, std::size_t n) noexcept;
double sum_squares(const double* x, std::size_t n) noexcept;
}  // namespace avx2
#endif

}  // namespace crossia::kernels
