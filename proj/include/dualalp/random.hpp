#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace dualalp {

// splitmix64 finalizer.  Used to spread nearby integer seeds apart.
inline std::uint64_t mix_u64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Seed for sub-task `counter` of a run whose root seed is `root`.
/// The scheme (root + (counter+1) * golden-ratio increment, then splitmix64)
/// is part of the reproducibility contract: re-runs with the same root seed
/// derive identical per-trial seeds.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t counter) {
  return mix_u64(root + 0x9e3779b97f4a7c15ull * (counter + 1));
}

/// mt19937_64 with hand-rolled output transforms.  The standard engine is
/// fully specified, but the standard *distributions* are not; drawing through
/// fixed transforms keeps every sample byte-reproducible across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform index in [0, n).
  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: n == 0");
    return static_cast<std::size_t>(
        (static_cast<unsigned __int128>(gen_()) * n) >> 64);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace dualalp
