#pragma once

#include <cstdint>

namespace sepcross {

/// SplitMix64 finalizer; a bijective 64-bit mixer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based stream: draw k of stream `id` under `seed` depends only on
/// (seed, id, k), never on how work is split between threads.
class CounterRng {
 public:
  constexpr CounterRng(std::uint64_t seed, std::uint64_t id) noexcept
      : key_(splitmix64(seed ^ splitmix64(id + 0x632be59bd9b4e019ULL))) {}

  constexpr std::uint64_t next() noexcept { return splitmix64(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  /// Uniform in [0, 1) with 53 random bits.
  constexpr double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform in (-1, 1).
  constexpr double symmetric() noexcept {
    for (;;) {
      const double u = 2.0 * uniform() - 1.0;
      if (u != -1.0) return u;
    }
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace sepcross
