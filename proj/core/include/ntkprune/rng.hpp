#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace ntkprune {

// All randomness in this project flows through the generator below so that
// results are reproducible bit for bit. std::mt19937 would be portable but
// the standard distributions are not (their algorithms are implementation
// defined), so both the generator (xoshiro256++) and the draws (53-bit
// uniforms, trigonometric Box-Muller normals) are spelled out here.

inline std::uint64_t splitmix64_next(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_u64(std::uint64_t h, std::uint64_t v) {
  std::uint64_t x = h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
  return splitmix64_next(x);
}

// Stream tags used with Rng::fork. Every independent consumer of randomness
// gets its own tag so that adding a draw in one place never shifts another.
namespace streams {
constexpr std::uint64_t weights = 1;
constexpr std::uint64_t reinit = 2;
constexpr std::uint64_t noise_input = 3;
constexpr std::uint64_t perturbation = 4;
constexpr std::uint64_t random_scores = 5;
constexpr std::uint64_t train_shuffle = 6;
constexpr std::uint64_t train_init = 7;
constexpr std::uint64_t data_centers = 8;
constexpr std::uint64_t data_samples = 9;
constexpr std::uint64_t subset = 10;
constexpr std::uint64_t spectrum = 11;
constexpr std::uint64_t trace_fd = 12;
}  // namespace streams

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : root_(seed) {
    std::uint64_t s = seed;
    for (auto& w : state_) w = splitmix64_next(s);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform on [0,1), 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on (0,1], safe as a log() argument.
  double uniform_pos() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller (trig form). Draws come in pairs; the
  // second is cached, so one draw consumes either zero or two uniforms.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.28318530717958647692528676655900577 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Unbiased integer in [0,n) by rejection.
  std::uint64_t uniform_index(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Derives an independent stream from the constructing seed and up to four
  // tags. Pure function of (seed, tags); does not consume from this stream.
  Rng fork(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0,
           std::uint64_t d = 0) const {
    std::uint64_t s = root_;
    s = mix_u64(s, a);
    s = mix_u64(s, b);
    s = mix_u64(s, c);
    s = mix_u64(s, d);
    return Rng(s);
  }

  std::uint64_t root_seed() const { return root_; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    if (v.empty()) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_index(i + 1));
      std::swap(v[i], v[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t root_ = 0;
  std::uint64_t state_[4] = {};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ntkprune
