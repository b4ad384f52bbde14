#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace repgan {

// Deterministic splittable random stream (xoshiro256++ core, splitmix64
// seeding). All stochastic code in the project draws from an explicit
// stream so runs are reproducible bit-for-bit across platforms; the
// distributions below are implemented here instead of <random> because
// libstdc++/libc++ do not guarantee identical sequences.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) s = splitmix64(x);
  }

  // Derives an independent child stream without disturbing this one.
  RngStream split(std::uint64_t key) const {
    std::uint64_t x = state_[0] ^ rotl(state_[2], 17) ^ (key * 0x9e3779b97f4a7c15ull);
    RngStream child(0);
    for (auto& s : child.state_) s = splitmix64(x);
    return child;
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

  // Uniform in [0,1) with 53 random mantissa bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; the spare draw is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Uniform integer in [0, k). Rejection keeps the distribution exact.
  int uniform_int(int k) {
    const std::uint64_t bound = ~std::uint64_t{0} - (~std::uint64_t{0} % static_cast<std::uint64_t>(k));
    std::uint64_t r = next_u64();
    while (r >= bound) r = next_u64();
    return static_cast<int>(r % static_cast<std::uint64_t>(k));
  }

  // Serializable state: 4 xoshiro words + cached Box-Muller spare.
  struct State {
    std::array<std::uint64_t, 4> words;
    double spare;
    bool has_spare;
  };
  State state() const { return {state_, spare_, has_spare_}; }
  void restore(const State& s) {
    state_ = s.words;
    spare_ = s.spare;
    has_spare_ = s.has_spare;
  }

 private:
  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  static std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

  std::array<std::uint64_t, 4> state_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace repgan
