#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <vector>

#include "cdpo/common.hpp"
#include "cdpo/kernels.hpp"

namespace k = cdpo::kernels;
using cdpo::DetRng;

namespace {

std::vector<double> randomv(std::size_t n, DetRng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

// independent triple-loop references
void naive_nt(std::vector<double>& c, const std::vector<double>& a,
              const std::vector<double>& b, std::size_t m, std::size_t n,
              std::size_t kk) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t l = 0; l < kk; ++l) s += a[i * kk + l] * b[j * kk + l];
      c[i * n + j] = s;
    }
}

void naive_nn_acc(std::vector<double>& c, const std::vector<double>& a,
                  const std::vector<double>& b, std::size_t m, std::size_t n,
                  std::size_t kk) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < kk; ++j) {
      double s = 0.0;
      for (std::size_t l = 0; l < n; ++l) s += a[i * n + l] * b[l * kk + j];
      c[i * kk + j] += s;
    }
}

void naive_tn_acc(std::vector<double>& c, const std::vector<double>& a,
                  const std::vector<double>& b, std::size_t m, std::size_t n,
                  std::size_t kk) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < kk; ++j) {
      double s = 0.0;
      for (std::size_t l = 0; l < m; ++l) s += a[l * n + i] * b[l * kk + j];
      c[i * kk + j] += s;
    }
}

}  // namespace

TEST_CASE("dot and axpy match hand-rolled loops") {
  DetRng rng(1);
  const auto a = randomv(97, rng);
  const auto b = randomv(97, rng);
  double want = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) want += a[i] * b[i];
  CHECK(k::dot(a.data(), b.data(), a.size()) == doctest::Approx(want).epsilon(1e-12));

  auto y = randomv(97, rng);
  auto y2 = y;
  k::axpy(y.data(), a.data(), 0.37, a.size());
  for (std::size_t i = 0; i < y2.size(); ++i) y2[i] += 0.37 * a[i];
  for (std::size_t i = 0; i < y.size(); ++i)
    CHECK(y[i] == doctest::Approx(y2[i]).epsilon(1e-15));
}

TEST_CASE("matmul_nt matches the naive reference") {
  DetRng rng(2);
  const std::size_t shapes[][3] = {{3, 5, 7}, {16, 16, 16}, {31, 9, 17}, {1, 1, 1}};
  for (const auto& sh : shapes) {
    const std::size_t m = sh[0], n = sh[1], kk = sh[2];
    const auto a = randomv(m * kk, rng);
    const auto b = randomv(n * kk, rng);
    std::vector<double> c(m * n, -1.0), want(m * n, 0.0);
    k::matmul_nt_serial(c.data(), a.data(), b.data(), m, n, kk);
    naive_nt(want, a, b, m, n, kk);
    for (std::size_t i = 0; i < c.size(); ++i)
      CHECK(c[i] == doctest::Approx(want[i]).epsilon(1e-12));
  }
}

TEST_CASE("matmul_nn_acc matches the naive reference and accumulates") {
  DetRng rng(3);
  const std::size_t m = 13, n = 8, kk = 21;
  const auto a = randomv(m * n, rng);
  const auto b = randomv(n * kk, rng);
  auto c = randomv(m * kk, rng);
  auto want = c;
  k::matmul_nn_acc_serial(c.data(), a.data(), b.data(), m, n, kk);
  naive_nn_acc(want, a, b, m, n, kk);
  for (std::size_t i = 0; i < c.size(); ++i)
    CHECK(c[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("matmul_tn_acc matches the naive reference and accumulates") {
  DetRng rng(4);
  const std::size_t m = 19, n = 6, kk = 11;
  const auto a = randomv(m * n, rng);
  const auto b = randomv(m * kk, rng);
  auto c = randomv(n * kk, rng);
  auto want = c;
  k::matmul_tn_acc_serial(c.data(), a.data(), b.data(), m, n, kk);
  naive_tn_acc(want, a, b, m, n, kk);
  for (std::size_t i = 0; i < c.size(); ++i)
    CHECK(c[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("serial and parallel flavors are bit-equal") {
  DetRng rng(5);
  const std::size_t shapes[][3] = {{64, 64, 64}, {33, 65, 17}, {128, 3, 200}};
  for (const auto& sh : shapes) {
    const std::size_t m = sh[0], n = sh[1], kk = sh[2];
    const auto a = randomv(m * kk, rng);
    const auto bt = randomv(n * kk, rng);
    std::vector<double> cs(m * n), cp(m * n);
    k::matmul_nt_serial(cs.data(), a.data(), bt.data(), m, n, kk);
    k::matmul_nt_omp(cp.data(), a.data(), bt.data(), m, n, kk);
    CHECK(std::memcmp(cs.data(), cp.data(), cs.size() * sizeof(double)) == 0);

    const auto b = randomv(n * kk, rng);
    std::vector<double> ds(m * kk, 0.25), dp(m * kk, 0.25);
    const auto a2 = randomv(m * n, rng);
    k::matmul_nn_acc_serial(ds.data(), a2.data(), b.data(), m, n, kk);
    k::matmul_nn_acc_omp(dp.data(), a2.data(), b.data(), m, n, kk);
    CHECK(std::memcmp(ds.data(), dp.data(), ds.size() * sizeof(double)) == 0);

    const auto b2 = randomv(m * kk, rng);
    std::vector<double> es(n * kk, -0.5), ep(n * kk, -0.5);
    k::matmul_tn_acc_serial(es.data(), a2.data(), b2.data(), m, n, kk);
    k::matmul_tn_acc_omp(ep.data(), a2.data(), b2.data(), m, n, kk);
    CHECK(std::memcmp(es.data(), ep.data(), es.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("dispatch honors the force-serial switch") {
  DetRng rng(6);
  const std::size_t m = 40, n = 24, kk = 32;
  const auto a = randomv(m * kk, rng);
  const auto b = randomv(n * kk, rng);
  std::vector<double> c1(m * n), c2(m * n);

  k::set_force_serial(true);
  CHECK(k::force_serial());
  k::matmul_nt(c1.data(), a.data(), b.data(), m, n, kk);
  k::set_force_serial(false);
  k::matmul_nt(c2.data(), a.data(), b.data(), m, n, kk);
  CHECK(std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(double)) == 0);
}

TEST_CASE("parallel_for touches every index exactly once") {
  const std::size_t n = 10007;
  std::vector<int> hits(n, 0);
  k::parallel_for(n, [&](std::size_t i) { hits[i] += 1; });
  for (std::size_t i = 0; i < n; ++i) CHECK(hits[i] == 1);
}
