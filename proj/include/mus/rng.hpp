#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

namespace mus {

/// 64-bit mix used to fan a seed out into independent streams.
std::uint64_t splitmix64(std::uint64_t x);

/// FNV-1a over the label bytes.
std::uint64_t hash_label(std::string_view label);

/// Seed for a named stage: adding a new stage never perturbs the others.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

/// Seed for the i-th item of a stage (tree, study, ...).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

// The engine is std::mt19937_64; the distributions below are written out so
// that sampled values do not depend on the standard library vendor.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be > 0.
  std::size_t index(std::size_t n);

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t integer(std::int64_t lo, std::int64_t hi);

  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  /// Knuth's multiplication method; fine for the small means used here.
  int poisson(double mean);

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = index(i);
      std::swap(first[i - 1], first[j]);
    }
  }

private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mus
