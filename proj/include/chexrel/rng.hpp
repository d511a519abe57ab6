#pragma once

#include <cmath>
#include <cstdint>

namespace chexrel {

// Counter-based splittable generator. A stream is keyed by (seed, purpose,
// element) so that adding elements never perturbs draws for earlier ones.
// Streams for distinct purposes are independent by construction.
namespace rngstream {
inline constexpr std::uint64_t kSeverity = 0x5e5e5e5e01ULL;
inline constexpr std::uint64_t kChange = 0xc4a6e02ULL;
inline constexpr std::uint64_t kFeatureNoise = 0xf0153e03ULL;
inline constexpr std::uint64_t kProjection = 0x9803704ULL;
inline constexpr std::uint64_t kSplit = 0x5991705ULL;
inline constexpr std::uint64_t kPathology = 0x9a706ULL;
inline constexpr std::uint64_t kInit = 0x1417000ULL;
inline constexpr std::uint64_t kShuffle = 0x5480f1eULL;
inline constexpr std::uint64_t kDropout = 0xd409001ULL;
inline constexpr std::uint64_t kTest = 0x7e57ULL;
}  // namespace rngstream

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class StreamRng {
 public:
  StreamRng() : state_(0x853c49e6748fea9bULL) {}

  StreamRng(std::uint64_t seed, std::uint64_t purpose, std::uint64_t element = 0) {
    state_ = splitmix64(splitmix64(splitmix64(seed) ^ purpose) ^ element);
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one value per call, caching the pair's second half
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  // integer in [0, n)
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace chexrel
