#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace xbench {

// Seeded generator whose derived draws (bounded ints, normals, shuffles) are
// computed here rather than by <random> distributions, so sequences are
// identical across standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next() { return engine_(); }
  // Uniform integer in [0, n).
  uint64_t below(uint64_t n);
  // Uniform in [0, 1).
  double uniform();
  double normal();
  // Normal(0, std) truncated to [-2 std, 2 std].
  float trunc_normal(float std);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Stable 64-bit FNV-1a, used for manifest and config hashes.
uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace xbench
