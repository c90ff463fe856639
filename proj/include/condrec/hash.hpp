#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace condrec {

inline constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

/// 64-bit FNV-1a. `state` allows incremental hashing over several buffers.
constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t state = kFnvOffsetBasis) noexcept {
  for (unsigned char c : bytes) {
    state ^= c;
    state *= kFnvPrime;
  }
  return state;
}

inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                             std::uint64_t state = kFnvOffsetBasis) noexcept {
  for (std::uint8_t c : bytes) {
    state ^= c;
    state *= kFnvPrime;
  }
  return state;
}

/// SplitMix64 finalizer (Steele, Lea, Flood 2014).
constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// SplitMix64 generator: state advances by the golden-ratio increment and
/// each output is the finalizer applied to the new state.
class SplitMix64 {
 public:
  static constexpr std::uint64_t kIncrement = 0x9e3779b97f4a7c15ULL;

  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    state_ += kIncrement;
    return splitmix64_mix(state_);
  }

  /// Uniform integer in [0, bound) via the high half of a 128-bit product.
  std::uint64_t below(std::uint64_t bound) noexcept {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next()) * bound) >> 64);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

 private:
  std::uint64_t state_;
};

}  // namespace condrec
