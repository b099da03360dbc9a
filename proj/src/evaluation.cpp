// SPDX-License-Identifier: Apache-2.0

#include "fal/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "fal/error.hpp"
#include "fal/geometry.hpp"

namespace fal {

double accuracy_of(std::span<const int> predicted, std::span<const int> truth) {
  if (truth.empty()) throw ValidationError("accuracy: empty test set");
  if (predicted.size() != truth.size()) throw ValidationError("accuracy: size mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

double balanced_recall_of(std::span<const int> predicted, std::span<const int> truth) {
  if (truth.empty()) throw ValidationError("balanced_recall: empty test set");
  if (predicted.size() != truth.size()) throw ValidationError("balanced_recall: size mismatch");
  std::map<int, std::pair<std::size_t, std::size_t>> per_class;  // label -> (hits, total)
  for (std::size_t i = 0; i < truth.size(); ++i) {
    auto& [hit, total] = per_class[truth[i]];
    ++total;
    hit += predicted[i] == truth[i] ? 1 : 0;
  }
  double acc = 0.0;
  for (const auto& [label, ht] : per_class) acc += static_cast<double>(ht.first) / static_cast<double>(ht.second);
  return acc / static_cast<double>(per_class.size());
}

double accuracy(const ModelParams& params, const FeatureDataset& test) {
  if (test.size() == 0) throw ValidationError("accuracy: empty test set");
  return accuracy_of(predict(params, test.features), test.labels);
}

double balanced_recall(const ModelParams& params, const FeatureDataset& test) {
  if (test.size() == 0) throw ValidationError("balanced_recall: empty test set");
  return balanced_recall_of(predict(params, test.features), test.labels);
}

Metric parse_metric(const std::string& name) {
  if (name == "accuracy") return Metric::kAccuracy;
  if (name == "balanced_recall") return Metric::kBalancedRecall;
  throw ValidationError("unknown metric '" + name + "'");
}

std::string metric_name(Metric m) { return m == Metric::kAccuracy ? "accuracy" : "balanced_recall"; }

double t_critical_95(std::size_t degrees_of_freedom) {
  static constexpr double kTable[] = {3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262};
  if (degrees_of_freedom < 3 || degrees_of_freedom > 9) {
    throw ValidationError("t_critical_95: tabulated for 3..9 degrees of freedom only");
  }
  return kTable[degrees_of_freedom - 3];
}

double t_score(std::span<const double> a_i, std::span<const double> a_j) {
  if (a_i.size() != a_j.size()) throw ValidationError("t_score: length mismatch");
  const std::size_t n = a_i.size();
  if (n < 2) throw ValidationError("t_score: need at least two seeds");
  std::vector<double> diff(n);
  double mu = 0.0;
  for (std::size_t l = 0; l < n; ++l) {
    diff[l] = a_i[l] - a_j[l];
    mu += diff[l];
  }
  mu /= static_cast<double>(n);
  double ss = 0.0;
  for (double d : diff) ss += (d - mu) * (d - mu);
  const double sigma = std::sqrt(ss / static_cast<double>(n - 1));
  if (sigma == 0.0) {
    if (mu > 0.0) return std::numeric_limits<double>::infinity();
    if (mu < 0.0) return -std::numeric_limits<double>::infinity();
    return 0.0;
  }
  return std::sqrt(static_cast<double>(n)) * mu / sigma;
}

namespace {

std::map<std::uint64_t, const RunResult*> by_seed(const std::vector<RunResult>& results, const char* side) {
  std::map<std::uint64_t, const RunResult*> out;
  for (const auto& r : results) {
    if (!out.emplace(r.seed, &r).second) {
      throw ValidationError(std::string("win_rate: duplicate seed on side ") + side);
    }
  }
  return out;
}

}  // namespace

ComparisonReport win_rate(const std::vector<RunResult>& results_i, const std::vector<RunResult>& results_j,
                          double threshold) {
  if (!(threshold > 0.0)) throw ValidationError("win_rate: threshold must be positive");
  if (results_i.empty() || results_j.empty()) throw ValidationError("win_rate: empty result set");
  const auto si = by_seed(results_i, "i");
  const auto sj = by_seed(results_j, "j");
  if (si.size() != sj.size()) throw ValidationError("win_rate: seed sets differ");

  const std::size_t rounds = results_i.front().series.size();
  const Metric metric = results_i.front().metric;
  std::vector<const RunResult*> left;
  std::vector<const RunResult*> right;
  for (auto [seed, ri] : si) {
    auto it = sj.find(seed);
    if (it == sj.end()) throw ValidationError("win_rate: seed " + std::to_string(seed) + " missing on side j");
    for (const RunResult* r : {ri, it->second}) {
      if (r->series.size() != rounds) throw ValidationError("win_rate: round counts differ");
      if (r->metric != metric) throw ValidationError("win_rate: metrics differ");
    }
    left.push_back(ri);
    right.push_back(it->second);
  }
  if (rounds == 0) throw ValidationError("win_rate: no rounds");

  ComparisonReport rep;
  rep.strategy_i = results_i.front().strategy;
  rep.strategy_j = results_j.front().strategy;
  rep.metric = metric;
  rep.threshold = threshold;
  std::vector<double> a(left.size());
  std::vector<double> b(left.size());
  std::size_t wins = 0;
  std::size_t defeats = 0;
  for (std::size_t r = 0; r < rounds; ++r) {
    for (std::size_t l = 0; l < left.size(); ++l) {
      a[l] = left[l]->series[r];
      b[l] = right[l]->series[r];
    }
    const double t_ij = t_score(a, b);
    const double t_ji = t_score(b, a);
    rep.t_scores.push_back(t_ij);
    rep.wins.push_back(t_ij > threshold);
    rep.defeats.push_back(t_ji > threshold);
    wins += rep.wins.back() ? 1 : 0;
    defeats += rep.defeats.back() ? 1 : 0;
  }
  rep.win_rate = static_cast<double>(wins) / static_cast<double>(rounds);
  rep.defeat_rate = static_cast<double>(defeats) / static_cast<double>(rounds);
  return rep;
}

Histogram make_histogram(std::span<const double> values, double lo, double hi, std::size_t bins) {
  if (bins < 1 || !(hi > lo)) throw ValidationError("histogram: invalid range");
  Histogram h;
  h.counts.assign(bins, 0);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(lo + width * static_cast<double>(b));
  h.edges.back() = hi;
  for (double v : values) {
    std::size_t b = 0;
    if (v >= hi) {
      b = bins - 1;
    } else if (v > lo) {
      b = std::min(bins - 1, static_cast<std::size_t>((v - lo) / width));
    }
    ++h.counts[b];
  }
  return h;
}

ShiftReport typicality_shift_report(const FeatureDataset& ds, const std::vector<ClientPartition>& parts,
                                    std::size_t neighbours, double threshold) {
  if (neighbours < 1) throw ValidationError("shift: neighbour count must be positive");
  const std::size_t n = ds.size();
  if (n < 2) throw ValidationError("shift: dataset needs at least two rows");

  ShiftReport rep;
  rep.neighbours = neighbours;
  rep.threshold = threshold;
  rep.centralized = typicality(ds.features, capped_neighbours(neighbours, n));
  rep.per_client.assign(n, std::numeric_limits<double>::quiet_NaN());
  for (const auto& p : parts) {
    if (p.indices.size() < 2) {
      throw ValidationError("shift: client " + std::to_string(p.client_id) + " has fewer than two points");
    }
    const Matrix pts = select_rows(ds.features, p.indices);
    const auto t = typicality(pts, capped_neighbours(neighbours, pts.rows));
    for (std::size_t i = 0; i < p.indices.size(); ++i) rep.per_client[p.indices[i]] = t[i];
  }
  for (double v : rep.per_client) {
    if (std::isnan(v)) throw ValidationError("shift: partition does not cover every row");
  }

  double sum_c = 0.0;
  double sum_p = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum_c += rep.centralized[i];
    sum_p += rep.per_client[i];
    if (rep.centralized[i] > threshold) {
      ++rep.above_threshold;
      if (rep.per_client[i] > threshold) ++rep.retained;
    }
  }
  rep.centralized_mean = sum_c / static_cast<double>(n);
  rep.per_client_mean = sum_p / static_cast<double>(n);
  rep.retention = rep.above_threshold == 0
                      ? std::numeric_limits<double>::quiet_NaN()
                      : static_cast<double>(rep.retained) / static_cast<double>(rep.above_threshold);

  const double hi = 2.0 * *std::max_element(rep.centralized.begin(), rep.centralized.end());
  rep.centralized_hist = make_histogram(rep.centralized, 0.0, hi, kShiftBins);
  rep.per_client_hist = make_histogram(rep.per_client, 0.0, hi, kShiftBins);
  return rep;
}

}  // namespace fal
