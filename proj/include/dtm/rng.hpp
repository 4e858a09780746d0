#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace dtm {

/// Deterministic PRNG (splitmix64 core). Hand-rolled so that streams are
/// identical across standard libraries and platforms; std:: distributions
/// are implementation-defined and would break byte-reproducible reports.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller (branch-free, fixed draw count).
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    // Guard log(0); u1 == 0 happens with probability 2^-53.
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

/// Hash-combines a master seed with stream tags (split id, member id, epoch,
/// ...). Independent runs get independent streams regardless of scheduling.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  Rng mix(master ^ 0xD1B54A32D192ED03ULL);
  std::uint64_t h = mix.next_u64();
  h ^= a + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
  Rng mix2(h);
  h = mix2.next_u64();
  h ^= b + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
  Rng mix3(h);
  h = mix3.next_u64();
  h ^= c + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
  return Rng(h).next_u64();
}

}  // namespace dtm
