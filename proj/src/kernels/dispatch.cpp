#include <atomic>
#include <cstdlib>
#include <string>

#include "crossia/errors.hpp"
#include "crossia/kernels.hpp"

namespace crossia::kernels {
namespace {

struct Table {
  double (*dot)(const double*, const double*, std::size_t) noexcept;
  void (*axpy)(double, const double*, double*, std::size_t) noexcept;
  void (*scale)(double, double*, std::size_t) noexcept;
  double (*sum_squares)(const double*, std::size_t) noexcept;
};

constexpr Table kScalarTable{&scalar::dot, &scalar::axpy, &scalar::scale, &scalar::sum_squares};
#ifdef CROSSIA_HAVE_AVX2_KERNELS
constexpr Table kAvx2Table{&avx2::dot, &avx2::axpy, &avx2::scale, &avx2::sum_squares};
#endif

const Table& table_for(Isa isa) noexcept {
#ifdef CROSSIA_HAVE_AVX2_KERNELS
  if (isa == Isa::kAvx2) return kAvx2Table;
#endif
  (void)isa;
  return kScalarTable;
}

std::atomic<const Table*>& current() {
  static std::atomic<const Table*> table{&table_for(detect_isa())};
  return table;
}

std::atomic<Isa>& current_isa() {
  static std::atomic<Isa> isa{detect_isa()};
  return isa;
}

const Table& active() noexcept { return *current().load(std::memory_order_relaxed); }

}  // namespace

std::string_view to_string(Isa isa) noexcept { return isa == Isa::kAvx2 ? "avx2" : "scalar"; }

bool isa_supported(Isa isa) noexcept {
  if (isa == Isa::kScalar) return true;
#ifdef CROSSIA_HAVE_AVX2_KERNELS
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa detect_isa() noexcept {
  if (const char* force = std::getenv("CROSSIA_FORCE_SCALAR"); force && std::string(force) == "1") {
    return Isa::kScalar;
  }
  return isa_supported(Isa::kAvx2) ? Isa::kAvx2 : Isa::kScalar;
}

Isa active_isa() noexcept { return current_isa().load(); }

void set_active_isa(Isa isa) {
  require(isa_supported(isa), "ISA " + std::string(to_string(isa)) + " not supported on this CPU");
  current().store(&table_for(isa));
  current_isa().store(isa);
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot: length mismatch");
  return active().dot(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require(x.size() == y.size(), "axpy: length mismatch");
  active().axpy(alpha, x.data(), y.data(), x.size());
}

void scale(double alpha, std::span<double> x) { active().scale(alpha, x.data(), x.size()); }

double sum_squares(std::span<const double> x) { return active().sum_squares(x.data(), x.size()); }

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  const Table& t = active();
  for (std::size_t i = 0; i < m; ++i) {
    double* c_row = c + i * n;
    const double* a_row = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      if (a_row[p] != 0.0) t.axpy(a_row[p], b + p * n, c_row, n);
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  const Table& t = active();
  for (std::size_t i = 0; i < m; ++i) {
    const double* a_row = a + i * k;
    double* c_row = c + i * n;
    for (std::size_t j = 0; j < n; ++j) c_row[j] += t.dot(a_row, b + j * k, k);
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  const Table& t = active();
  for (std::size_t p = 0; p < k; ++p) {
    const double* a_row = a + p * m;
    const double* b_row = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      if (a_row[i] != 0.0) t.axpy(a_row[i], b_row, c + i * n, n);
    }
  }
}

}  // namespace crossia::kernels
