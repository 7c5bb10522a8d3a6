#pragma once

#include <cstdint>
#include <random>

namespace mutarjem {

/// Seedable, splittable random stream. `split(seed, i)` gives stream i its own
/// engine so draws never depend on the order in which streams are consumed.
class RandomStream {
 public:
  using Engine = std::mt19937_64;

  explicit RandomStream(std::uint64_t seed) : engine_(mix(seed)) {}

  static RandomStream split(std::uint64_t seed, std::uint64_t index) {
    return RandomStream(mix(seed) ^ mix(index + 0x9e3779b97f4a7c15ULL));
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  Engine& engine() noexcept { return engine_; }

  /// SplitMix64 finalizer.
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  Engine engine_;
};

}  // namespace mutarjem
