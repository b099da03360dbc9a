// SPDX-License-Identifier: Apache-2.0

#include "fal/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fal/error.hpp"
#include "fal/rng.hpp"

namespace fal {

namespace {

void require_finite(const Matrix& points, const char* who) {
  for (double v : points.data) {
    if (!std::isfinite(v)) throw ValidationError(std::string(who) + ": non-finite input");
  }
}

// Squared distances from row i to every row, clamped at zero.
std::vector<double> row_sq_dist(const Matrix& points, std::size_t i) {
  std::vector<double> out(points.rows);
  const auto a = points.row(i);
  for (std::size_t j = 0; j < points.rows; ++j) out[j] = std::max(0.0, sq_distance(a, points.row(j)));
  return out;
}

std::vector<std::size_t> nearest_from(const std::vector<double>& dist, std::size_t self,
                                      std::size_t count) {
  std::vector<std::size_t> order;
  order.reserve(dist.size() - 1);
  for (std::size_t j = 0; j < dist.size(); ++j) {
    if (j != self) order.push_back(j);
  }
  auto closer = [&](std::size_t a, std::size_t b) {
    return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count), order.end(),
                    closer);
  order.resize(count);
  return order;
}

}  // namespace

std::vector<std::vector<std::size_t>> Clustering::members() const {
  std::vector<std::vector<std::size_t>> out(k);
  for (std::size_t i = 0; i < assignments.size(); ++i) out[assignments[i]].push_back(i);
  return out;
}

Matrix pairwise_sq_dist(const Matrix& points) {
  require_finite(points, "pairwise_sq_dist");
  const std::size_t n = points.rows;
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = std::max(0.0, sq_distance(points.row(i), points.row(j)));
      out(i, j) = d;
      out(j, i) = d;
    }
  }
  return out;
}

std::vector<std::size_t> knn(const Matrix& points, std::size_t index, std::size_t count) {
  if (index >= points.rows) throw ValidationError("knn: index out of range");
  if (count < 1 || count + 1 > points.rows) throw ValidationError("knn: neighbour count out of range");
  return nearest_from(row_sq_dist(points, index), index, count);
}

std::size_t capped_neighbours(std::size_t configured, std::size_t set_size) {
  if (set_size < 2) return 1;
  return std::max<std::size_t>(1, std::min(configured, set_size - 1));
}

std::vector<double> typicality(const Matrix& points, std::size_t neighbours) {
  const std::size_t n = points.rows;
  if (n < 2) throw ValidationError("typicality: need at least two points");
  if (neighbours < 1 || neighbours > n - 1) throw ValidationError("typicality: neighbour count out of range");
  require_finite(points, "typicality");

  std::vector<double> out(n);
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = points.row(i);
    std::size_t w = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) dist[w++] = std::max(0.0, sq_distance(a, points.row(j)));
    }
    // Squared distance ordering equals distance ordering; the summed set is
    // the same regardless of how ties are split.
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(neighbours - 1),
                     dist.begin() + static_cast<std::ptrdiff_t>(n - 1));
    std::vector<double> nearest(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(neighbours));
    std::sort(nearest.begin(), nearest.end());
    double sum = 0.0;
    for (double d2 : nearest) sum += std::sqrt(d2);
    const double mean = sum / static_cast<double>(neighbours);
    out[i] = mean > 0.0 ? 1.0 / mean : 1.0 / kTypicalityEpsilon;
  }
  return out;
}

namespace {

std::size_t nearest_centroid(std::span<const double> x, const Matrix& centroids, double* best_d2) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows; ++c) {
    const double d = sq_distance(x, centroids.row(c));
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (best_d2) *best_d2 = best_d;
  return best;
}

Matrix plus_plus_seed(const Matrix& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.rows;
  Matrix centroids(k, points.cols);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::vector<bool> chosen(n, false);

  std::size_t pick = uniform_index(rng, n);
  for (std::size_t c = 0; c < k; ++c) {
    if (c > 0) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) total += d2[i];
      pick = n;
      if (total > 0.0) {
        const double u = uniform_unit(rng) * total;
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          acc += d2[i];
          if (d2[i] > 0.0 && u < acc) {
            pick = i;
            break;
          }
        }
        if (pick == n) {
          for (std::size_t i = n; i-- > 0;) {
            if (d2[i] > 0.0) {
              pick = i;
              break;
            }
          }
        }
      } else {
        // Every point coincides with a chosen centroid: take the lowest unused row.
        pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), false) - chosen.begin());
      }
    }
    chosen[pick] = true;
    std::copy(points.row(pick).begin(), points.row(pick).end(), centroids.row(c).begin());
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_distance(points.row(i), centroids.row(c)));
    }
  }
  return centroids;
}

}  // namespace

Clustering kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, const KMeansOptions& opts) {
  const std::size_t n = points.rows;
  const std::size_t d = points.cols;
  if (k < 1 || k > n) throw ValidationError("kmeans: cluster count out of range");
  require_finite(points, "kmeans");

  Rng rng = make_rng(seed);
  Clustering out;
  out.k = k;
  out.centroids = plus_plus_seed(points, k, rng);
  out.assignments.assign(n, 0);

  auto assign = [&]() {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d2 = 0.0;
      out.assignments[i] = nearest_centroid(points.row(i), out.centroids, &d2);
      inertia += d2;
    }
    return inertia;
  };

  out.inertia = assign();
  for (std::size_t iter = 0; iter < opts.max_iters; ++iter) {
    Matrix next(k, d);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = out.assignments[i];
      ++counts[c];
      auto dst = next.row(c);
      const auto src = points.row(i);
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (double& v : next.row(c)) v /= static_cast<double>(counts[c]);
    }
    // Repair empty clusters with the point farthest from its centroid, taken
    // from a cluster that can spare it.
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto home = out.assignments[i];
        if (counts[home] < 2) continue;
        const double dd = sq_distance(points.row(i), next.row(home));
        if (dd > far_d) {
          far_d = dd;
          far = i;
        }
      }
      if (far == n) break;
      --counts[out.assignments[far]];
      out.assignments[far] = c;
      counts[c] = 1;
      std::copy(points.row(far).begin(), points.row(far).end(), next.row(c).begin());
    }

    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) shift = std::max(shift, sq_distance(next.row(c), out.centroids.row(c)));
    out.centroids = std::move(next);
    out.inertia = assign();
    out.inertia_trace.push_back(out.inertia);
    if (std::sqrt(shift) < opts.tol) break;
  }

  // A final reassignment may still empty a cluster when points coincide; resolve
  // by moving spare points, keeping every cluster non-empty.
  std::vector<std::size_t> counts(k, 0);
  for (auto a : out.assignments) ++counts[a];
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] != 0) continue;
    std::size_t far = n;
    double far_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto home = out.assignments[i];
      if (counts[home] < 2) continue;
      const double dd = sq_distance(points.row(i), out.centroids.row(home));
      if (dd > far_d) {
        far_d = dd;
        far = i;
      }
    }
    if (far == n) break;
    --counts[out.assignments[far]];
    out.assignments[far] = c;
    counts[c] = 1;
    std::copy(points.row(far).begin(), points.row(far).end(), out.centroids.row(c).begin());
  }
  out.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.inertia += sq_distance(points.row(i), out.centroids.row(out.assignments[i]));
  }
  return out;
}

}  // namespace fal
