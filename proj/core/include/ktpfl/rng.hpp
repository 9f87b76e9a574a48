#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace ktpfl {

// Named sub-streams of the master run seed. Every stochastic choice in a run
// derives its generator from (seed, stream, tags...), so results never depend
// on thread count or call interleaving.
enum class Stream : std::uint64_t {
  kSynthMeans = 1,
  kSynthSamples,
  kPublicHoldout,
  kPartitionShards,
  kCarvePublic,
  kModelInit,
  kLocalBatches,
  kPublicBatch,
  kClientSample,
  kFineTune,
};

/// splitmix64-style mix of a seed with a list of tags.
std::uint64_t mix_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

std::uint64_t mix_seed(std::uint64_t seed, Stream stream,
                       std::initializer_list<std::uint64_t> tags = {});

std::mt19937_64 make_rng(std::uint64_t seed, Stream stream,
                         std::initializer_list<std::uint64_t> tags = {});

// Distribution helpers with fully specified algorithms. std::*_distribution
// is implementation-defined, which would tie run reproducibility to the
// standard library; these are pinned instead.

/// Uniform double in [0, 1).
double uniform_double(std::mt19937_64& rng);

/// Uniform integer in [0, bound). bound must be > 0.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound);

/// Standard normal via Box-Muller (no cached spare).
double normal_sample(std::mt19937_64& rng);

/// Gamma(shape, 1) via Marsaglia-Tsang, valid for any shape > 0.
double gamma_sample(std::mt19937_64& rng, double shape);

/// In-place Fisher-Yates shuffle.
template <typename T>
void shuffle_vector(std::vector<T>& values, std::mt19937_64& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(uniform_below(rng, i));
    std::swap(values[i - 1], values[j]);
  }
}

}  // namespace ktpfl
