// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "fal/matrix.hpp"

namespace fal {

inline constexpr double kTypicalityEpsilon = 1e-12;

struct KMeansOptions {
  std::size_t max_iters = 100;
  double tol = 1e-6;
};

struct Clustering {
  std::vector<std::size_t> assignments;
  Matrix centroids;  // k x d
  std::size_t k = 0;
  double inertia = 0.0;
  /// Inertia after every Lloyd iteration, in order.
  std::vector<double> inertia_trace;

  std::vector<std::vector<std::size_t>> members() const;
};

/// N x N squared Euclidean distances; exactly symmetric with a zero diagonal.
Matrix pairwise_sq_dist(const Matrix& points);

/// The `count` nearest neighbours of point `index` (itself excluded), ordered by
/// (distance, index).
std::vector<std::size_t> knn(const Matrix& points, std::size_t index, std::size_t count);

/// Inverse mean distance to the `neighbours` nearest points, per point. A zero
/// mean distance yields 1 / kTypicalityEpsilon.
std::vector<double> typicality(const Matrix& points, std::size_t neighbours);

/// Neighbour count actually used for a set of `set_size` points: clamp the
/// configured value into [1, set_size - 1].
std::size_t capped_neighbours(std::size_t configured, std::size_t set_size);

/// k-means++ seeding followed by Lloyd iterations. Empty clusters take the point
/// farthest from its current centroid.
Clustering kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                  const KMeansOptions& opts = {});

}  // namespace fal
