#include "cdpo/kernels.hpp"

#include <atomic>

namespace cdpo::kernels {

namespace {
std::atomic<bool> g_force_serial{false};
}

void set_force_serial(bool v) { g_force_serial.store(v); }
bool force_serial() { return g_force_serial.load(); }

bool openmp_available() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

void set_num_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

namespace detail {
bool use_parallel() {
#ifdef _OPENMP
  // Inside an active parallel region nested parallelism would
  // oversubscribe; OpenMP serializes it anyway, skip the overhead.
  return !g_force_serial.load() && omp_in_parallel() == 0;
#else
  return false;
#endif
}
}  // namespace detail

// The noinline workers are the single definition of the per-element FP
// order; both flavors of every matmul route through them.
__attribute__((noinline)) double dot(const double* a, const double* b,
                                     std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

__attribute__((noinline)) void axpy(double* y, const double* x, double alpha,
                                    std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

namespace {

inline void nt_row(double* c_row, const double* a_row, const double* b,
                   std::size_t n, std::size_t k) {
  for (std::size_t j = 0; j < n; ++j) c_row[j] = dot(a_row, b + j * k, k);
}

inline void nn_acc_row(double* c_row, const double* a_row, const double* b,
                       std::size_t n, std::size_t k) {
  for (std::size_t j = 0; j < n; ++j) axpy(c_row, b + j * k, a_row[j], k);
}

// row j of C += sum_m A[m][j] * B[m]
inline void tn_acc_row(double* c_row, const double* a, const double* b,
                       std::size_t j, std::size_t m, std::size_t n,
                       std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) axpy(c_row, b + i * k, a[i * n + j], k);
}

}  // namespace

void matmul_nt_serial(double* c, const double* a, const double* b,
                      std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) nt_row(c + i * n, a + i * k, b, n, k);
}

void matmul_nt_omp(double* c, const double* a, const double* b, std::size_t m,
                   std::size_t n, std::size_t k) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    nt_row(c + i * n, a + i * k, b, n, k);
  }
}

void matmul_nt(double* c, const double* a, const double* b, std::size_t m,
               std::size_t n, std::size_t k) {
  if (detail::use_parallel()) {
    matmul_nt_omp(c, a, b, m, n, k);
  } else {
    matmul_nt_serial(c, a, b, m, n, k);
  }
}

void matmul_nn_acc_serial(double* c, const double* a, const double* b,
                          std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) nn_acc_row(c + i * k, a + i * n, b, n, k);
}

void matmul_nn_acc_omp(double* c, const double* a, const double* b,
                       std::size_t m, std::size_t n, std::size_t k) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    nn_acc_row(c + i * k, a + i * n, b, n, k);
  }
}

void matmul_nn_acc(double* c, const double* a, const double* b, std::size_t m,
                   std::size_t n, std::size_t k) {
  if (detail::use_parallel()) {
    matmul_nn_acc_omp(c, a, b, m, n, k);
  } else {
    matmul_nn_acc_serial(c, a, b, m, n, k);
  }
}

void matmul_tn_acc_serial(double* c, const double* a, const double* b,
                          std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t j = 0; j < n; ++j) tn_acc_row(c + j * k, a, b, j, m, n, k);
}

void matmul_tn_acc_omp(double* c, const double* a, const double* b,
                       std::size_t m, std::size_t n, std::size_t k) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long j = 0; j < static_cast<long long>(n); ++j) {
    tn_acc_row(c + j * k, a, b, static_cast<std::size_t>(j), m, n, k);
  }
}

void matmul_tn_acc(double* c, const double* a, const double* b, std::size_t m,
                   std::size_t n, std::size_t k) {
  if (detail::use_parallel()) {
    matmul_tn_acc_omp(c, a, b, m, n, k);
  } else {
    matmul_tn_acc_serial(c, a, b, m, n, k);
  }
}

}  // namespace cdpo::kernels
