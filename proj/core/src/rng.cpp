#include "ktpfl/rng.hpp"

#include <cmath>

namespace ktpfl {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t state = splitmix64(seed);
  for (std::uint64_t tag : tags) {
    state = splitmix64(state ^ (tag + 0x9e3779b97f4a7c15ULL));
  }
  return state;
}

std::uint64_t mix_seed(std::uint64_t seed, Stream stream,
                       std::initializer_list<std::uint64_t> tags) {
  std::uint64_t state = mix_seed(seed, {static_cast<std::uint64_t>(stream)});
  for (std::uint64_t tag : tags) {
    state = splitmix64(state ^ (tag + 0x9e3779b97f4a7c15ULL));
  }
  return state;
}

std::mt19937_64 make_rng(std::uint64_t seed, Stream stream,
                         std::initializer_list<std::uint64_t> tags) {
  return std::mt19937_64(mix_seed(seed, stream, tags));
}

double uniform_double(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  // Rejection sampling on the top bits; unbiased for any bound.
  std::uint64_t threshold = (~bound + 1) % bound;  // 2^64 mod bound
  for (;;) {
    std::uint64_t r = rng();
    if (r >= threshold) return r % bound;
  }
}

double normal_sample(std::mt19937_64& rng) {
  double u1 = uniform_double(rng);
  double u2 = uniform_double(rng);
  while (u1 <= 0.0) u1 = uniform_double(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double gamma_sample(std::mt19937_64& rng, double shape) {
  if (shape < 1.0) {
    // Boost to shape+1, then scale by U^(1/shape).
    double u = uniform_double(rng);
    while (u <= 0.0) u = uniform_double(rng);
    return gamma_sample(rng, shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  double d = shape - 1.0 / 3.0;
  double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = normal_sample(rng);
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    double u = uniform_double(rng);
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

}  // namespace ktpfl
