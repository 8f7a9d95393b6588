#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace breakiv {

// splitmix64 finalizer, used to derive independent substream keys from
// (seed, index) pairs so that parallel work items own disjoint streams
// regardless of scheduling.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t substream_key(std::uint64_t seed, std::uint64_t a,
                                   std::uint64_t b = 0) {
  return mix64(mix64(seed ^ mix64(a)) ^ mix64(b ^ 0xD1B54A32D192ED03ULL));
}

// mt19937_64-backed stream with an explicit Box-Muller normal sampler.
// std::normal_distribution is implementation-defined, so we roll the
// transform ourselves to keep streams reproducible across toolchains.
class RngStream {
 public:
  explicit RngStream(std::uint64_t key) : gen_(key) {}

  double uniform() {
    // 53-bit uniform in (0,1); never returns 0 so log() below is safe.
    const std::uint64_t r = gen_() >> 11;
    return (static_cast<double>(r) + 0.5) * (1.0 / 9007199254740992.0);
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 6.283185307179586476925286766559 * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace breakiv
