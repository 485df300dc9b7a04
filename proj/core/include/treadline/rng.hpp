#pragma once

#include <cstdint>
#include <vector>

namespace treadline {

// Counter-based generator (splitmix64 over an incrementing counter).
// Identical seed + identical call sequence gives identical output on every
// platform; no libc or <random> distribution is involved in the integer
// path. Used for weight init, shuffling, augmentation and the random
// pruning baseline.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), counter_(0) {}

  uint64_t next_u64();

  // Uniform in [0, 1) with 53 (24) significant bits.
  double uniform();
  float uniform_f32();

  // Uniform integer in [0, n), n > 0. Rejection-sampled, unbiased.
  int64_t bounded(int64_t n);

  // Standard normal via Box-Muller; second draw is cached.
  double normal();
  float normal_f32() { return static_cast<float>(normal()); }

  // Deterministic Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      int64_t j = bounded(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

  // Independent stream derived from this seed and a stream key.
  Rng spawn(uint64_t key) const;

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  uint64_t counter_;
  bool have_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace treadline
