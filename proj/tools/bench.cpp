// Times the serial kernel path against the OpenMP path and checks the
// two stay bit-identical while they're at it. Run with --reps N to
// steady the medians.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "cdpo/common.hpp"
#include "cdpo/kernels.hpp"
#include "cdpo/policy.hpp"

using Clock = std::chrono::steady_clock;

namespace {

double time_once(const std::function<void()>& fn) {
  auto t0 = Clock::now();
  fn();
  auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

double median_ms(int reps, const std::function<void()>& fn) {
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(reps));
  for (int i = 0; i < reps; ++i) times.push_back(time_once(fn));
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

void fill_random(std::vector<double>& v, cdpo::DetRng& rng) {
  for (auto& x : v) x = rng.normal();
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void bench_matmul(int reps) {
  struct Shape {
    std::size_t m, n, k;
  };
  const Shape shapes[] = {{64, 64, 64}, {48, 256, 64}, {256, 320, 64}};
  std::printf("%-26s %10s %10s %8s %s\n", "kernel", "serial ms", "omp ms",
              "speedup", "bit-equal");
  for (const auto& s : shapes) {
    cdpo::DetRng rng(s.m * 31 + s.n * 7 + s.k);
    std::vector<double> a(s.m * s.k), b(s.n * s.k);
    std::vector<double> c_serial(s.m * s.n), c_omp(s.m * s.n);
    fill_random(a, rng);
    fill_random(b, rng);

    double ts = median_ms(reps, [&] {
      cdpo::kernels::matmul_nt_serial(c_serial.data(), a.data(), b.data(),
                                      s.m, s.n, s.k);
    });
    double tp = median_ms(reps, [&] {
      cdpo::kernels::matmul_nt_omp(c_omp.data(), a.data(), b.data(), s.m, s.n,
                                   s.k);
    });
    char name[64];
    std::snprintf(name, sizeof(name), "matmul_nt %zux%zux%zu", s.m, s.n, s.k);
    std::printf("%-26s %10.3f %10.3f %7.2fx %s\n", name, ts, tp, ts / tp,
                bits_equal(c_serial, c_omp) ? "yes" : "NO");
  }
}

void bench_model(int reps) {
  using namespace cdpo::policy;

  // vocabulary shaped like the synthetic corpus
  std::vector<std::string> words;
  for (int i = 0; i < 300; ++i) words.push_back("w" + std::to_string(i));
  Tokenizer tok = Tokenizer::build({[&] {
    std::string all;
    for (const auto& w : words) {
      all += w;
      all += ' ';
    }
    return all;
  }()});

  ModelDims dims;
  dims.vocab = tok.vocab_size();
  PolicyModel model(tok, dims, 7, InitMode::random);

  cdpo::DetRng rng(11);
  std::vector<int> prompt, completion;
  for (int i = 0; i < 40; ++i) {
    prompt.push_back(static_cast<int>(4 + rng.bounded(dims.vocab - 4)));
  }
  for (int i = 0; i < 6; ++i) {
    completion.push_back(static_cast<int>(4 + rng.bounded(dims.vocab - 4)));
  }

  std::vector<double> grad(model.parameters().size(), 0.0);
  auto fwd_bwd = [&] {
    SequenceGrad sg(model.dims(), model.parameters(), prompt, completion);
    sg.accumulate_gradient(1.0, grad);
  };

  cdpo::kernels::set_force_serial(true);
  double ts = median_ms(reps, fwd_bwd);
  cdpo::kernels::set_force_serial(false);
  double tp = median_ms(reps, fwd_bwd);

  std::printf("%-26s %10.3f %10.3f %7.2fx %s\n", "model fwd+bwd (46 tok)", ts,
              tp, ts / tp, "-");
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 20;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--reps" && i + 1 < argc) {
      reps = std::atoi(argv[++i]);
    }
  }
  if (reps < 1) reps = 1;

  std::printf("openmp available: %s\n",
              cdpo::kernels::openmp_available() ? "yes" : "no");
  bench_matmul(reps);
  bench_model(reps);
  return 0;
}
