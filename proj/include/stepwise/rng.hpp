#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace stepwise {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Folds a list of keys into one 64-bit stream seed. Order matters.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = 0x6a09e667f3bcc908ULL;
  for (auto k : keys) h = splitmix64(h ^ splitmix64(k));
  return h;
}

/// xoshiro256** seeded through splitmix64. Small, fast and reproducible
/// across platforms; every random stream in the library is one of these,
/// derived from (master seed, purpose, question, sample index, ...).
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& w : state_) {
      s += 0x9e3779b97f4a7c15ULL;
      w = splitmix64(s);
    }
  }
  Rng(std::initializer_list<std::uint64_t> keys) : Rng(derive_seed(keys)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [lo, hi] (inclusive).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>((*this)());
    // Lemire-style rejection to avoid modulo bias.
    const std::uint64_t limit = max() - (max() % span);
    std::uint64_t x;
    do {
      x = (*this)();
    } while (x >= limit);
    return lo + static_cast<std::int64_t>(x % span);
  }

  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(n) - 1));
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t state_[4];
};

/// Purpose tags keep streams for different consumers disjoint.
namespace stream {
inline constexpr std::uint64_t kGenerate = 0x67656e;
inline constexpr std::uint64_t kSample = 0x73616d;
inline constexpr std::uint64_t kGreedy = 0x677264;
inline constexpr std::uint64_t kVerify = 0x766572;
inline constexpr std::uint64_t kBalance = 0x62616c;
inline constexpr std::uint64_t kPair = 0x706169;
inline constexpr std::uint64_t kRefine = 0x726566;
inline constexpr std::uint64_t kRerank = 0x72726b;
inline constexpr std::uint64_t kEval = 0x65766c;
inline constexpr std::uint64_t kSft = 0x736674;
}  // namespace stream

}  // namespace stepwise
