#pragma once

#include <cstdint>
#include <string_view>
#include <utility>

namespace langsg {

// FNV-1a, used to key random streams and the stub text encoder.
std::uint64_t hash_string(std::string_view s, std::uint64_t basis = 0xcbf29ce484222325ULL);

std::uint64_t splitmix64(std::uint64_t& state);

/// xoshiro256** generator with portable helpers. All randomness in the
/// library flows through this type so that runs are reproducible across
/// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Independent stream keyed by (seed, purpose).
  static Rng derive(std::uint64_t seed, std::string_view purpose);
  Rng fork(std::string_view purpose);

  std::uint64_t next_u64();
  /// Uniform in [0, n). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n);
  int uniform_int(int lo, int hi);  // inclusive
  double uniform01();
  double uniform(double lo, double hi);
  double normal();

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      std::uint64_t j = uniform_index(i);
      using std::swap;
      swap(first[i - 1], first[j]);
    }
  }

 private:
  std::uint64_t s_[4];
};

}  // namespace langsg
