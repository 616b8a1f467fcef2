#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace prefmap {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid parameters or input shapes (bad lat/lon, non-divisible extent, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Configuration file or flag problems. The CLI maps these to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A stage was asked to run before the artifact it reads exists (exit code 3).
class DependencyError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure inside an iterative algorithm (NaN, non-convergence).
class NumericError : public Error {
 public:
  using Error::Error;
};

// FNV-1a 64-bit.
constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = kFnvOffset) {
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a_bytes(std::span<const std::uint8_t> bytes, std::uint64_t h = kFnvOffset) {
  for (auto b : bytes) {
    h ^= b;
    h *= kFnvPrime;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derive an independent stream seed from a parent seed and a label.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  return splitmix64(seed ^ fnv1a(label));
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) + index);
}

std::string hex64(std::uint64_t v);

/// Portable seeded generator.
///
/// Standard library distributions are implementation-defined, so every draw
/// used by the pipeline goes through these conversions instead. The engine is
/// xoshiro256** seeded through splitmix64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). Unbiased (rejection sampling).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller; caches the second variate.
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }

double spearman_rho(std::span<const double> a, std::span<const double> b);
/// Average ranks (ties share the mean rank), 0-based.
std::vector<double> ranks(std::span<const double> v);
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

}  // namespace prefmap
