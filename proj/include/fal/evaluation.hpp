// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fal/data.hpp"
#include "fal/model.hpp"

namespace fal {

double accuracy(const ModelParams& params, const FeatureDataset& test);
double balanced_recall(const ModelParams& params, const FeatureDataset& test);

double accuracy_of(std::span<const int> predicted, std::span<const int> truth);
/// Unweighted mean recall over the classes that occur in `truth`.
double balanced_recall_of(std::span<const int> predicted, std::span<const int> truth);

enum class Metric { kAccuracy, kBalancedRecall };
Metric parse_metric(const std::string& name);
std::string metric_name(Metric m);

/// One strategy's metric values for one seed, indexed by round 1..R.
struct RunResult {
  std::string strategy;
  std::uint64_t seed = 0;
  Metric metric = Metric::kAccuracy;
  std::vector<double> series;
};

/// Two-sided 95% critical value used as the default win threshold (four seeds).
inline constexpr double kDefaultWinThreshold = 2.776;

/// Two-sided 95% Student-t critical values for 3 to 9 degrees of freedom.
double t_critical_95(std::size_t degrees_of_freedom);

/// Paired t statistic sqrt(L) * mean / sd of (a_i - a_j) over L seeds, with the
/// sample standard deviation. A zero deviation gives +inf, -inf or 0 by the sign
/// of the mean.
double t_score(std::span<const double> a_i, std::span<const double> a_j);

struct ComparisonReport {
  std::string strategy_i;
  std::string strategy_j;
  Metric metric = Metric::kAccuracy;
  double threshold = kDefaultWinThreshold;
  std::vector<double> t_scores;  // t_r^{ij}, r = 1..R
  std::vector<bool> wins;        // t_r^{ij} > threshold
  std::vector<bool> defeats;     // t_r^{ji} > threshold
  double win_rate = 0.0;
  double defeat_rate = 0.0;
};

/// Seeds are paired by seed id; both sides must cover the same seeds and rounds.
ComparisonReport win_rate(const std::vector<RunResult>& results_i, const std::vector<RunResult>& results_j,
                          double threshold = kDefaultWinThreshold);

struct Histogram {
  std::vector<double> edges;  // bins + 1 ascending edges
  std::vector<std::size_t> counts;
};

/// Equal-width bins over [lo, hi]; values at or beyond hi land in the last bin,
/// values below lo in the first.
Histogram make_histogram(std::span<const double> values, double lo, double hi, std::size_t bins);

struct ShiftReport {
  std::size_t neighbours = 0;
  double threshold = 1.0;
  std::vector<double> centralized;  // per dataset row
  std::vector<double> per_client;   // per dataset row, computed inside its client
  Histogram centralized_hist;
  Histogram per_client_hist;
  double centralized_mean = 0.0;
  double per_client_mean = 0.0;
  std::size_t above_threshold = 0;  // rows with centralized typicality > threshold
  std::size_t retained = 0;         // ... whose per-client typicality is still > threshold
  /// retained / above_threshold; NaN when no row clears the threshold.
  double retention = 0.0;
};

inline constexpr std::size_t kShiftBins = 50;

ShiftReport typicality_shift_report(const FeatureDataset& ds, const std::vector<ClientPartition>& parts,
                                    std::size_t neighbours, double threshold = 1.0);

}  // namespace fal
