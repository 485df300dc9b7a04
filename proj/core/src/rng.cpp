#include "treadline/rng.hpp"

#include <cmath>

#include "treadline/error.hpp"

namespace treadline {

namespace {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

uint64_t Rng::next_u64() { return splitmix64(seed_ + 0x632be59bd9b4e019ULL * ++counter_); }

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

float Rng::uniform_f32() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

int64_t Rng::bounded(int64_t n) {
  if (n <= 0) throw ParamError("Rng::bounded requires n > 0");
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<int64_t>(x % un);
}

double Rng::normal() {
  if (have_cached_normal_) {
    have_cached_normal_ = false;
    return cached_normal_;
  }
  // Box-Muller on two fresh uniforms; u1 shifted away from zero.
  double u1 = uniform();
  double u2 = uniform();
  u1 = u1 < 1e-300 ? 1e-300 : u1;
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.14159265358979323846 * u2;
  cached_normal_ = r * std::sin(theta);
  have_cached_normal_ = true;
  return r * std::cos(theta);
}

Rng Rng::spawn(uint64_t key) const {
  return Rng(splitmix64(seed_ ^ splitmix64(key + 0x8e2ab7735d06cf2bULL)));
}

}  // namespace treadline
