#pragma once
// Counter-based RNG: keyed SplitMix64 finalizer over an incrementing
// counter. Draws depend only on (key, counter), so independent streams can
// be derived from (seed, tag, index) without any shared mutable state and
// results are bitwise reproducible across runs.

#include <cmath>
#include <cstdint>
#include <vector>

namespace gca {

inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(seed) {}

  // Stream for (seed, tag) or (seed, tag, index); used to give every sample,
  // epoch or subsystem its own draw sequence.
  static Rng derive(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
    return Rng(mix64(mix64(seed + kGolden * (tag + 1)) + kGolden * (index + 1)));
  }

  std::uint64_t next_u64() { return mix64(key_ + kGolden * ++counter_); }

  // uniform in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  std::uint64_t uniform_int(std::uint64_t n) {
    // 128-bit multiply keeps the map unbiased enough for our n (all tiny)
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; the paired draw is cached so sequences stay cheap.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Fisher-Yates; std::shuffle is not pinned across standard libraries.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Stream tags so subsystems never collide on the same derived key.
namespace rng_stream {
constexpr std::uint64_t kSynth = 0x01;
constexpr std::uint64_t kInit = 0x02;
constexpr std::uint64_t kShuffle = 0x03;
constexpr std::uint64_t kAugment = 0x04;
constexpr std::uint64_t kGradCheck = 0x05;
}  // namespace rng_stream

}  // namespace gca
