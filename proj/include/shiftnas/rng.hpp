#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace shiftnas {

// Seeded random stream. Distribution helpers are implemented here rather than
// through <random> distributions so that streams replay identically across
// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n). n must be positive.
  std::size_t index(std::size_t n);

  bool bernoulli(double p) { return uniform() < p; }

  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Stable sub-seed for a named purpose: hashing (master, label) keeps every
// component reproducible on its own.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label);

// 64-bit FNV-1a over raw bytes; used for checksums and config hashes.
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text);

template <class T>
void shuffle(T& seq, Rng& rng) {
  for (std::size_t i = seq.size(); i > 1; --i) {
    std::size_t j = rng.index(i);
    using std::swap;
    swap(seq[i - 1], seq[j]);
  }
}

}  // namespace shiftnas
