// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

namespace fal {

using Rng = std::mt19937_64;

/// Tags separating independent random streams that share a master seed.
enum class Purpose : std::uint64_t {
  kQuery = 1,
  kLocalTrain = 2,
  kLocalOnlyInit = 3,
  kLocalOnlyTrain = 4,
  kGlobalInit = 5,
  kInitialLabels = 6,
  kPartition = 7,
};

std::uint64_t splitmix64(std::uint64_t x);

/// Counter-based substream seed: a pure function of (seed, client, round, purpose),
/// so draws do not depend on the order in which clients or seeds are processed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t client, std::uint64_t round,
                          Purpose purpose);

inline Rng make_rng(std::uint64_t seed) { return Rng(splitmix64(seed)); }

/// Uniform integer in [0, n). Rejection sampling keeps it unbiased and
/// independent of the standard library's distribution implementation.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

/// Uniform double in [0, 1) with 53 random bits.
double uniform_unit(Rng& rng);

}  // namespace fal
