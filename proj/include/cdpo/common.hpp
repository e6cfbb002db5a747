#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cdpo {

// Error taxonomy, mapped to distinct process exit codes by the CLI
// (validation/parse -> 2, io -> 3, anything else -> 4).
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : ValidationError {
  explicit ParseError(const std::string& msg) : ValidationError(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Deterministic RNG. xorshift* gives a portable u64 stream; every
// distribution transform is hand-rolled here because the std
// distribution objects are implementation-defined and would break the
// byte-identical reproducibility contract across toolchains.
class DetRng {
 public:
  explicit DetRng(std::uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ull) {
    // a couple of warm-up scrambles so nearby seeds diverge quickly
    next_u64();
    next_u64();
  }

  std::uint64_t next_u64() {
    // xorshift* core; small, portable, fully specified
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dull;
  }

  // uniform double in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform integer in [0, n)
  std::uint64_t bounded(std::uint64_t n) {
    if (n == 0) throw ValidationError("DetRng::bounded: n must be > 0");
    // rejection sampling to avoid modulo bias
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // standard normal via Box-Muller, spare value cached
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(bounded(i + 1));
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a, used for id-hash splits and file checksums.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  return fnv1a64(s.data(), s.size());
}

// Whitespace-separated words; runs of whitespace collapse.
std::vector<std::string> split_words(std::string_view text);

// Collapses whitespace runs to single spaces and trims the ends.
std::string normalize_whitespace(std::string_view text);

// Lowercased maximal alphanumeric runs; everything else is a separator.
std::vector<std::string> alnum_tokens(std::string_view text);

}  // namespace cdpo
