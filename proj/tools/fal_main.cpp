// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fal/data.hpp"
#include "fal/error.hpp"
#include "fal/evaluation.hpp"
#include "fal/experiment.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (auto cell : fal::split(text, ',')) {
    if (!cell.empty()) out.push_back(fal::parse_number<std::uint64_t>(cell, "--seeds"));
  }
  if (out.empty()) throw fal::ValidationError("--seeds: empty list");
  return out;
}

void print_partition_table(const fal::FeatureDataset& ds, const std::vector<fal::ClientPartition>& parts) {
  const auto table = fal::partition_class_counts(ds, parts);
  std::cout << "client";
  for (int c = 0; c < ds.num_classes; ++c) std::cout << "\tc" << c;
  std::cout << "\ttotal\n";
  for (std::size_t k = 0; k < parts.size(); ++k) {
    std::cout << k;
    for (auto n : table[k]) std::cout << '\t' << n;
    std::cout << '\t' << parts[k].indices.size() << '\n';
  }
  std::cout << "mean max-class share: " << fal::mean_max_class_share(ds, parts) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated active learning simulation harness"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic Gaussian-mixture train/test pair");
  fal::SynthParams sp;
  std::string synth_out;
  synth->add_option("--classes", sp.num_classes, "Number of classes")->capture_default_str();
  synth->add_option("--dim", sp.dim, "Feature dimension")->capture_default_str();
  synth->add_option("--per-class", sp.per_class, "Samples per class before the 80/20 split")->capture_default_str();
  synth->add_option("--spread", sp.spread, "Standard deviation around each class mean")->capture_default_str();
  synth->add_option("--seed", sp.seed, "Random seed")->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory (train.csv, test.csv)")->required();

  // partition
  auto* partition = app.add_subcommand("partition", "Split a dataset across clients");
  std::string part_dataset;
  std::string part_alpha = "uniform";
  std::size_t part_clients = 10;
  std::uint64_t part_seed = 0;
  std::string part_out;
  partition->add_option("--dataset", part_dataset, "Dataset CSV")->required();
  partition->add_option("--alpha", part_alpha, "Dirichlet concentration or 'uniform'")->capture_default_str();
  partition->add_option("--clients", part_clients, "Number of clients")->capture_default_str();
  partition->add_option("--seed", part_seed, "Random seed")->capture_default_str();
  partition->add_option("--out", part_out, "Partition CSV to write")->required();

  // run
  auto* run = app.add_subcommand("run", "Run a federated active learning experiment");
  std::string run_config;
  std::string run_out;
  std::string run_seeds;
  std::string run_strategy;
  run->add_option("--config", run_config, "Experiment config file")->required();
  run->add_option("--out", run_out, "Override output directory");
  run->add_option("--seeds", run_seeds, "Override seed list, comma separated");
  run->add_option("--strategy", run_strategy, "Override strategy");

  // compare
  auto* compare = app.add_subcommand("compare", "Paired t-test win/defeat rates between two strategies");
  std::vector<std::string> cmp_files;
  std::string cmp_out;
  std::string cmp_metric = "accuracy";
  double cmp_threshold = fal::kDefaultWinThreshold;
  compare->add_option("files", cmp_files, "Results files as pairs: i1 j1 [i2 j2 ...]")->required();
  compare->add_option("--out", cmp_out, "Output directory")->required();
  compare->add_option("--metric", cmp_metric, "accuracy or balanced_recall")->capture_default_str();
  compare->add_option("--threshold", cmp_threshold, "Win threshold on the t-score")->capture_default_str();

  // shift
  auto* shift = app.add_subcommand("shift", "Typicality distribution shift between centralized and per-client views");
  std::string shift_dataset;
  std::string shift_partition;
  std::size_t shift_k = 20;
  double shift_threshold = 1.0;
  std::string shift_out;
  shift->add_option("--dataset", shift_dataset, "Dataset CSV")->required();
  shift->add_option("--partition", shift_partition, "Partition CSV")->required();
  shift->add_option("--k", shift_k, "Nearest neighbours for typicality")->capture_default_str();
  shift->add_option("--threshold", shift_threshold, "Typicality threshold for retention")->capture_default_str();
  shift->add_option("--out", shift_out, "Output directory")->required();

  // plotdata
  auto* plot = app.add_subcommand("plotdata", "Turn results, comparisons and histograms into plot-ready CSVs");
  std::vector<std::string> plot_files;
  std::string plot_out;
  plot->add_option("files", plot_files, "Input files")->required();
  plot->add_option("--out", plot_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*synth) {
      const auto split = fal::synth_dataset(sp.num_classes, sp.dim, sp.per_class, sp.spread, sp.seed);
      fal::fs::create_directories(synth_out);
      fal::save_dataset(split.train, fal::fs::path(synth_out) / "train.csv");
      fal::save_dataset(split.test, fal::fs::path(synth_out) / "test.csv");
      std::cout << "train rows: " << split.train.size() << ", test rows: " << split.test.size() << '\n';
    } else if (*partition) {
      const auto ds = fal::load_dataset(part_dataset);
      const auto spec = fal::PartitionSpec::parse_alpha(part_alpha, part_clients, part_seed);
      const auto parts = fal::dirichlet_partition(ds, spec);
      fal::save_partition(parts, part_out);
      print_partition_table(ds, parts);
    } else if (*run) {
      auto cfg = fal::load_config(run_config);
      if (!run_out.empty()) cfg.output_dir = run_out;
      if (!run_seeds.empty()) cfg.seeds = parse_seeds(run_seeds);
      if (!run_strategy.empty()) cfg.strategy = fal::parse_strategy(run_strategy);
      cfg.validate();
      const auto out = fal::run_experiment(cfg);
      for (const auto& r : out.runs) {
        const auto& last = r.records.back();
        std::cout << "seed " << r.seed << ": round " << last.round << " accuracy " << last.accuracy
                  << " balanced_recall " << last.balanced_recall << '\n';
      }
      std::cout << "results: " << out.results_file.string() << '\n';
    } else if (*compare) {
      if (cmp_files.size() % 2 != 0) throw fal::ValidationError("compare: results files must come in pairs");
      std::vector<std::pair<fal::fs::path, fal::fs::path>> pairs;
      for (std::size_t i = 0; i < cmp_files.size(); i += 2) pairs.emplace_back(cmp_files[i], cmp_files[i + 1]);
      const auto set = fal::compare_results(pairs, fal::parse_metric(cmp_metric), cmp_threshold);
      fal::write_comparison(set, cmp_out);
      for (std::size_t c = 0; c < set.reports.size(); ++c) {
        const auto& rep = set.reports[c];
        std::cout << set.configurations[c] << ' ' << rep.strategy_i << " vs " << rep.strategy_j
                  << ": win " << rep.win_rate << " defeat " << rep.defeat_rate << '\n';
      }
      std::cout << "mean: win " << set.mean_win_rate << " defeat " << set.mean_defeat_rate << '\n';
    } else if (*shift) {
      const auto ds = fal::load_dataset(shift_dataset);
      const auto parts = fal::load_partition(shift_partition, ds.size());
      const auto rep = fal::typicality_shift_report(ds, parts, shift_k, shift_threshold);
      fal::write_shift_report(rep, parts, shift_out);
      std::cout << "centralized mean " << rep.centralized_mean << ", per-client mean " << rep.per_client_mean
                << ", retention " << rep.retention << '\n';
    } else if (*plot) {
      std::vector<fal::fs::path> inputs(plot_files.begin(), plot_files.end());
      for (const auto& p : fal::write_plot_data(inputs, plot_out)) std::cout << p.string() << '\n';
    }
  } catch (const fal::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
