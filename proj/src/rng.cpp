#include "htk/rng.hpp"

#include <cmath>
#include <numbers>

namespace htk::rng {

double uniform01(Engine& engine) { return static_cast<double>(engine() >> 11) * 0x1.0p-53; }

std::uint64_t uniform_below(Engine& engine, std::uint64_t n) {
  // Reject the short top range so every residue is equally likely.
  const std::uint64_t limit = -n % n;
  for (;;) {
    const std::uint64_t x = engine();
    if (x >= limit) return x % n;
  }
}

bool bernoulli(Engine& engine, double p) { return uniform01(engine) < p; }

std::uint64_t zero_truncated_poisson(Engine& engine, double lambda) {
  const double floor_p = std::exp(-lambda);
  for (;;) {
    // Knuth's product method; fine for the small rates used for span lengths.
    std::uint64_t k = 0;
    double p = uniform01(engine);
    while (p > floor_p) {
      ++k;
      p *= uniform01(engine);
    }
    if (k > 0) return k;
  }
}

double normal(Engine& engine, double mean, double stddev) {
  const double u1 = 1.0 - uniform01(engine);  // (0, 1]
  const double u2 = uniform01(engine);
  const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  return mean + stddev * z;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace htk::rng
