#pragma once

#include <cstddef>

// Dense double-precision kernels behind the policy model and trainer.
//
// Every kernel comes in a _serial and an _omp flavor plus a dispatching
// front. Parallelism is always over output rows, and both flavors call
// the same noinline per-row worker, so the floating-point operation
// order per output element is identical: serial and parallel results
// are bit-equal, and results do not depend on the thread count. That is
// what lets the trainer keep its byte-identical determinism contract
// while still using all cores.

namespace cdpo::kernels {

// Runtime switch used by tests and the benchmark; when forced serial,
// all dispatching fronts run the serial flavor.
void set_force_serial(bool v);
bool force_serial();

// Clamp OpenMP threads (0 = library default).
void set_num_threads(int n);
bool openmp_available();

double dot(const double* a, const double* b, std::size_t n);
void axpy(double* y, const double* x, double alpha, std::size_t n);

// C[M x N] = A[M x K] * B[N x K]^T   (B holds one output unit per row)
void matmul_nt_serial(double* c, const double* a, const double* b,
                      std::size_t m, std::size_t n, std::size_t k);
void matmul_nt_omp(double* c, const double* a, const double* b,
                   std::size_t m, std::size_t n, std::size_t k);
void matmul_nt(double* c, const double* a, const double* b,
               std::size_t m, std::size_t n, std::size_t k);

// C[M x K] += A[M x N] * B[N x K]
void matmul_nn_acc_serial(double* c, const double* a, const double* b,
                          std::size_t m, std::size_t n, std::size_t k);
void matmul_nn_acc_omp(double* c, const double* a, const double* b,
                       std::size_t m, std::size_t n, std::size_t k);
void matmul_nn_acc(double* c, const double* a, const double* b,
                   std::size_t m, std::size_t n, std::size_t k);

// C[N x K] += A[M x N]^T * B[M x K]
void matmul_tn_acc_serial(double* c, const double* a, const double* b,
                          std::size_t m, std::size_t n, std::size_t k);
void matmul_tn_acc_omp(double* c, const double* a, const double* b,
                       std::size_t m, std::size_t n, std::size_t k);
void matmul_tn_acc(double* c, const double* a, const double* b,
                   std::size_t m, std::size_t n, std::size_t k);

// Runs f(i) for i in [0, n); each index is handled by exactly one
// thread, so writes to disjoint slots stay deterministic. f must not
// throw.
template <typename F>
void parallel_for(std::size_t n, F&& f);

namespace detail {
bool use_parallel();
}

}  // namespace cdpo::kernels

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cdpo::kernels {

template <typename F>
void parallel_for(std::size_t n, F&& f) {
#ifdef _OPENMP
  if (detail::use_parallel()) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
      f(static_cast<std::size_t>(i));
    }
    return;
  }
#endif
  for (std::size_t i = 0; i < n; ++i) f(i);
}

}  // namespace cdpo::kernels
