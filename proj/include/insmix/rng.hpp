#pragma once

#include <cstdint>
#include <random>

namespace insmix {

// splitmix64 finalizer; used both as a bit mixer and to expand seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Per-sample stream derivation: adding images or repetitions never
// perturbs the randomness of earlier samples.
inline std::uint64_t derive_stream_seed(std::uint64_t master, std::uint64_t image_index,
                                        std::uint64_t repetition) {
  std::uint64_t s = splitmix64(master ^ 0x6d73696d736e69ULL);  // "insmix" tag
  s = splitmix64(s ^ image_index);
  s = splitmix64(s ^ (repetition * 0x9e3779b97f4a7c15ULL));
  return s;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // uniform integer in [0, n)
  std::size_t index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> d(0, n - 1);
    return d(eng_);
  }

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(eng_);
  }

  double normal() {
    std::normal_distribution<double> d(0.0, 1.0);
    return d(eng_);
  }

  bool coin(double p = 0.5) { return uniform(0.0, 1.0) < p; }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace insmix
