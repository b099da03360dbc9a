// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fal/csv.hpp"
#include "fal/data.hpp"
#include "fal/evaluation.hpp"
#include "fal/federation.hpp"

namespace fal {

namespace fs = std::filesystem;

struct SynthParams {
  int num_classes = 10;
  std::size_t dim = 16;
  std::size_t per_class = 100;
  double spread = 1.0;
  std::uint64_t seed = 0;
};

enum class BudgetMode { kTiny, kSmall, kExplicit };

struct ExperimentConfig {
  // data: either both paths or synth parameters
  std::optional<fs::path> train_path;
  std::optional<fs::path> test_path;
  SynthParams synth;
  std::vector<std::optional<fs::path>> client_feature_paths;  // indexed by client id

  std::optional<fs::path> partition_path;
  std::string alpha = "uniform";
  std::size_t num_clients = 10;
  std::uint64_t partition_seed = 0;

  Arch arch;
  TrainConfig train;
  Strategy strategy = Strategy::kRandom;
  Selector selector = Selector::kGlobal;
  LogoOptions logo;
  AggregationWeight weighting = AggregationWeight::kLabeled;

  BudgetMode budget_mode = BudgetMode::kTiny;
  std::size_t explicit_budget = 0;
  std::size_t rounds = 10;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3};
  std::size_t initial_labeled = 0;
  std::size_t client_threads = 1;
  std::size_t seed_threads = 1;

  GeometryConfig geometry;
  fs::path output_dir = "results";

  /// Per-client, per-round annotation count: C (tiny), 3C (small) or explicit.
  std::size_t budget(int num_classes) const;
  void validate() const;
};

/// Parses the sectioned key=value format documented in docs/experiment.conf.
/// Relative paths resolve against the config file's directory.
ExperimentConfig load_config(const fs::path& path);
ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir = ".");

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<RoundRecord> records;
};

struct ExperimentOutput {
  std::vector<SeedRun> runs;
  fs::path results_file;
  fs::path selections_file;
  std::size_t budget = 0;
};

/// Loaded dataset, test set and partition for a config.
struct ExperimentInputs {
  FeatureDataset train;
  FeatureDataset test;
  std::vector<ClientPartition> partition;
  std::vector<std::optional<Matrix>> client_features;
};

ExperimentInputs prepare_inputs(const ExperimentConfig& cfg);

/// Runs every seed and writes results_<strategy>.csv and selections_<strategy>.csv
/// into the output directory. Byte-identical across reruns and thread counts.
ExperimentOutput run_experiment(const ExperimentConfig& cfg);
ExperimentOutput run_experiment(const ExperimentConfig& cfg, const ExperimentInputs& inputs);

// Results CSV: strategy,seed,round,labeled_per_client,accuracy,balanced_recall
inline constexpr const char* kResultsHeader = "strategy,seed,round,labeled_per_client,accuracy,balanced_recall";

struct ResultRow {
  std::string strategy;
  std::uint64_t seed = 0;
  std::size_t round = 0;
  std::vector<std::size_t> labeled_per_client;
  double accuracy = 0.0;
  double balanced_recall = 0.0;
};

std::string format_result_row(const std::string& strategy, std::uint64_t seed, const RoundRecord& rec);
std::vector<ResultRow> load_results(const fs::path& path);
/// Groups rows into one series per seed; rounds must run 1..R without gaps.
std::vector<RunResult> to_run_results(const std::vector<ResultRow>& rows, Metric metric);

struct ComparisonSet {
  std::vector<std::string> configurations;
  std::vector<ComparisonReport> reports;
  double mean_win_rate = 0.0;
  double mean_defeat_rate = 0.0;
};

/// One report per (results_i, results_j) pair of files; each pair is a configuration.
ComparisonSet compare_results(const std::vector<std::pair<fs::path, fs::path>>& pairs, Metric metric,
                              double threshold);
void write_comparison(const ComparisonSet& set, const fs::path& out_dir);

struct ComparisonSummaryRow {
  std::string configuration;
  std::string strategy_i;
  std::string strategy_j;
  std::string metric;
  double threshold = 0.0;
  std::size_t rounds = 0;
  double win_rate = 0.0;
  double defeat_rate = 0.0;
};
std::vector<ComparisonSummaryRow> load_comparison_summary(const fs::path& path);

struct ComparisonRoundRow {
  std::string configuration;
  std::string pair;
  std::size_t round = 0;
  double t = 0.0;
  bool win_ij = false;
  bool win_ji = false;
};
std::vector<ComparisonRoundRow> load_comparison_rounds(const fs::path& path);

/// Writes shift_histogram.csv, shift_summary.csv and shift_points.csv.
void write_shift_report(const ShiftReport& rep, const std::vector<ClientPartition>& parts, const fs::path& out_dir);

struct HistogramRow {
  std::size_t bin = 0;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t centralized = 0;
  std::size_t per_client = 0;
};
std::vector<HistogramRow> load_shift_histogram(const fs::path& path);

struct CurvePoint {
  std::string strategy;
  std::string metric;
  std::size_t round = 0;
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t seeds = 0;
};

/// Mean and standard error (sample sd / sqrt(n), 0 for a single seed) per round.
std::vector<CurvePoint> curve_points(const std::vector<ResultRow>& rows);

/// Reads results, comparison summaries and shift histograms (detected by header)
/// and writes curves.csv, win_rates.csv and typicality_hist.csv as applicable.
std::vector<fs::path> write_plot_data(const std::vector<fs::path>& inputs, const fs::path& out_dir);

}  // namespace fal
