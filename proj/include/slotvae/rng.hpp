// Deterministic RNG used everywhere seeds matter. Uniform/normal draws are
// generated from raw mt19937_64 output (std::*_distribution is
// implementation-defined and would break byte-determinism contracts).
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace slotvae {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stable combiner for (seed, index) -> per-record / per-step streams.
inline uint64_t seed_mix(uint64_t a, uint64_t b) {
  return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ULL));
}

class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform() { return (double)(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // [0, n)
  int64_t uniform_int(int64_t n) {
    return (int64_t)(((__uint128_t)eng_() * (__uint128_t)n) >> 64);
  }

  // Box-Muller, no cached spare so the stream state is just the engine.
  double normal() {
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = last - first;
    for (auto i = n - 1; i > 0; --i) {
      auto j = uniform_int(i + 1);
      std::swap(first[i], first[j]);
    }
  }

  std::string save_state() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }
  void load_state(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace slotvae
