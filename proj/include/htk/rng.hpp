#pragma once

#include <cstdint>
#include <random>
#include <string_view>

// Samplers built only on the raw mt19937_64 stream. The standard library's
// distributions are implementation-defined, so they would make seeded output
// differ between toolchains.

namespace htk::rng {

using Engine = std::mt19937_64;

/// Uniform double in [0, 1) with 53 random bits.
double uniform01(Engine& engine);

/// Uniform integer in [0, n). n must be positive.
std::uint64_t uniform_below(Engine& engine, std::uint64_t n);

bool bernoulli(Engine& engine, double p);

/// Poisson(lambda) conditioned on a non-zero draw.
std::uint64_t zero_truncated_poisson(Engine& engine, double lambda);

double normal(Engine& engine, double mean, double stddev);

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

/// Seed for one document, independent of processing order.
inline std::uint64_t document_seed(std::uint64_t seed, std::string_view doc_id) {
  return splitmix64(seed ^ fnv1a64(doc_id));
}

}  // namespace htk::rng
