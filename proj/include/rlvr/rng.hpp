#pragma once

/**
 * Deterministic seeded random streams.
 *
 * Every stochastic component draws from a Stream keyed by (master seed,
 * purpose tag, indices). Streams are independent by construction, so rollout
 * scheduling never changes results: trajectory j of query q at step s always
 * sees the same stream regardless of evaluation order.
 *
 * The uniform mapping is explicit (53-bit mantissa construction) rather than
 * std::uniform_real_distribution, which is not pinned by the standard.
 */

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace rlvr::rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (splitmix64(b) + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

template <typename... Rest>
inline std::uint64_t mix(std::uint64_t a, std::uint64_t b, Rest... rest) {
  return mix(mix(a, b), static_cast<std::uint64_t>(rest)...);
}

// Purpose tags keep unrelated draws on disjoint streams.
namespace tag {
constexpr std::uint64_t kRollout = 0x01;
constexpr std::uint64_t kShuffle = 0x02;
constexpr std::uint64_t kBatch = 0x03;
constexpr std::uint64_t kInit = 0x04;
constexpr std::uint64_t kSuite = 0x05;
constexpr std::uint64_t kDiagnose = 0x06;
}  // namespace tag

class Stream {
 public:
  explicit Stream(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>((static_cast<unsigned __int128>(next_u64()) * span) >> 64);
  }

  /// Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) {
      u1 = uniform();
    }
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(0, static_cast<int>(i) - 1));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rlvr::rng
