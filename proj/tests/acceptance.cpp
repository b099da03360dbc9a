// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "fal/error.hpp"
#include "fal/evaluation.hpp"
#include "fal/experiment.hpp"
#include "fal/federation.hpp"
#include "fal/geometry.hpp"
#include "fal/rng.hpp"
#include "fal/strategies.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Criterion body returns its verdict; `limit_s` is the wall-clock budget (0 = none).
bool run_criterion(int id, const std::string& name, double limit_s, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (limit_s > 0.0 && secs >= limit_s) {
    out.pass = false;
    out.detail += " [over time limit " + std::to_string(limit_s) + " s]";
  }
  char timing[64];
  std::snprintf(timing, sizeof timing, "%.2f s", secs);
  std::cout << (out.pass ? "PASS" : "FAIL") << "  " << id << ". " << name << " (" << timing << "): " << out.detail
            << std::endl;
  return out.pass;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("fal_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::vector<std::size_t> iota_vec(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

Outcome typicality_oracle() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  std::size_t checked = 0;
  const std::size_t ks[3] = {1, 5, 20};
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + rng() % 199;
    const std::size_t d = 1 + rng() % 8;
    const auto m = oracle::random_matrix(n, d, rng, 3.0);
    for (std::size_t k : ks) {
      const std::size_t kk = fal::capped_neighbours(k, n);
      const auto got = fal::typicality(m, kk);
      const auto ref = oracle::typicality(m, kk);
      for (std::size_t i = 0; i < n; ++i) {
        worst = std::max(worst, oracle::relative_error(got[i], ref[i]));
        ++checked;
      }
    }
  }
  return {worst <= 1e-9, std::to_string(checked) + " values, max relative error " + fmt(worst) + " (tol 1e-9)"};
}

Outcome gradient_check() {
  std::mt19937_64 rng(202);
  double worst = 0.0;
  int instances = 0;
  for (const fal::Arch arch : {fal::Arch::linear(), fal::Arch::mlp(8)}) {
    for (int t = 0; t < 20; ++t) {
      const std::size_t d = 2 + rng() % 7;
      const int c = 2 + static_cast<int>(rng() % 5);
      const std::size_t n = 3 + rng() % 15;
      const auto p = fal::init_params(arch, d, c, rng());
      const auto xs = oracle::random_matrix(n, d, rng, 1.5);
      std::vector<int> ys(n);
      for (auto& y : ys) y = static_cast<int>(rng() % static_cast<unsigned>(c));
      const double wd = 1e-3;
      const auto analytic = oracle::flatten(fal::loss_and_gradient(p, xs, ys, wd).gradient);
      const auto numeric = oracle::numeric_gradient(p, xs, ys, wd);
      std::vector<double> diff(analytic.size());
      for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = analytic[i] - numeric[i];
      worst = std::max(worst, norm(diff) / std::max({norm(analytic), norm(numeric), 1e-12}));
      ++instances;
    }
  }
  return {worst <= 1e-4, std::to_string(instances) + " instances, max relative error " + fmt(worst) + " (tol 1e-4)"};
}

Outcome fedavg_correctness() {
  std::mt19937_64 rng(303);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const auto arch = t % 2 ? fal::Arch::mlp(5) : fal::Arch::linear();
    const std::size_t k = 1 + rng() % 6;
    std::vector<fal::ModelParams> ps;
    std::vector<double> w;
    for (std::size_t i = 0; i < k; ++i) {
      ps.push_back(fal::init_params(arch, 4, 3, rng()));
      w.push_back(1.0 + static_cast<double>(rng() % 50));
    }
    const auto got = oracle::flatten(fal::fedavg(ps, w));
    const auto ref = oracle::weighted_mean(ps, w);
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(got[i] - ref[i]));
  }
  const auto p = fal::init_params(fal::Arch::mlp(5), 4, 3, 9);
  const bool fixed = fal::fedavg(std::vector<fal::ModelParams>{p, p, p, p}, std::vector<double>{3, 1, 7, 2}) == p;
  auto neg = p;
  neg.for_each([](double& v, bool) { v = -v; });
  bool symmetric = true;
  fal::fedavg(std::vector<fal::ModelParams>{p, neg}, std::vector<double>{5, 5}).for_each([&](double v, bool) {
    symmetric = symmetric && v == 0.0;
  });
  return {worst <= 1e-12 && fixed && symmetric, "max abs error " + fmt(worst) + " (tol 1e-12), fixed point " +
                                                    (fixed ? "exact" : "broken") + ", symmetry " +
                                                    (symmetric ? "exact" : "broken")};
}

Outcome t_test_framework() {
  const std::vector<double> zero(4, 0.0);
  const double t1 = fal::t_score(std::vector<double>{1, 2, 3, 2}, zero);
  const double t2 = fal::t_score(std::vector<double>{1, -1, 1, -1}, zero);
  const double t3 = fal::t_score(std::vector<double>{1, 1, 1, 1}, zero);
  const double t4 = fal::t_score(std::vector<double>{-1, -1, -1, -1}, zero);
  const double inf = std::numeric_limits<double>::infinity();
  bool ok = std::abs(t1 - 4.898979485566356) < 1e-12 && t2 == 0.0 && t3 == inf && t4 == -inf;
  ok = ok && fal::kDefaultWinThreshold == 2.776;

  // Win iff t strictly exceeds the threshold.
  auto series = [](const std::vector<double>& v) {
    std::vector<fal::RunResult> out;
    for (std::size_t s = 0; s < v.size(); ++s) out.push_back({"x", s, fal::Metric::kAccuracy, {v[s]}});
    return out;
  };
  const std::vector<double> a{1, 2, 3, 2};
  const auto at = fal::win_rate(series(a), series(zero), t1);
  const auto below = fal::win_rate(series(a), series(zero), std::nextafter(t1, 0.0));
  const auto dflt = fal::win_rate(series(a), series(zero));
  ok = ok && at.win_rate == 0.0 && below.win_rate == 1.0 && dflt.win_rate == 1.0 && dflt.defeat_rate == 0.0;
  const auto self = fal::win_rate(series(a), series(a));
  ok = ok && self.win_rate == 0.0 && self.defeat_rate == 0.0;
  return {ok, "t(1,2,3,2)=" + fmt(t1) + ", t(1,-1,1,-1)=" + fmt(t2) + ", t(sigma=0)=" + fmt(t3) + "/" + fmt(t4) +
                  ", strict threshold and self-comparison " + (ok ? "as expected" : "wrong")};
}

Outcome typicality_shift() {
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(fal::splitmix64(seed + 500));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    fal::FeatureDataset ds;
    ds.num_classes = 10;
    ds.features = fal::Matrix(5000, 8);
    for (auto& v : ds.features.data) v = unit(rng);
    for (std::size_t i = 0; i < 5000; ++i) {
      ds.ids.push_back(static_cast<std::int64_t>(i));
      ds.labels.push_back(static_cast<int>(rng() % 10));
    }
    const auto parts = fal::dirichlet_partition(ds, fal::PartitionSpec{std::nullopt, 10, seed});
    const auto rep = fal::typicality_shift_report(ds, parts, 20);
    ok = ok && rep.per_client_mean < rep.centralized_mean;
    detail += (seed ? "; " : "") + fmt(rep.per_client_mean) + " < " + fmt(rep.centralized_mean);
  }
  return {ok, "per-client vs centralized mean typicality: " + detail};
}

double mean_final_accuracy(fal::Strategy strategy, const fal::ExperimentInputs& inputs, const fs::path& out) {
  fal::ExperimentConfig cfg;
  cfg.num_clients = 10;
  cfg.strategy = strategy;
  cfg.budget_mode = fal::BudgetMode::kTiny;
  cfg.rounds = 5;
  cfg.seeds = {0, 1, 2, 3};
  cfg.arch = fal::Arch::linear();
  cfg.output_dir = out;
  const auto res = fal::run_experiment(cfg, inputs);
  double sum = 0.0;
  for (const auto& run : res.runs) sum += run.records.back().accuracy;
  return sum / static_cast<double>(res.runs.size());
}

Outcome directional_cold_start() {
  const auto dir = scratch("directional");
  fal::ExperimentInputs inputs;
  // Well-separated classes (spread 0.5) and 400 rows per client, so five tiny
  // rounds label a small fraction of each pool.
  auto split = fal::synth_dataset(10, 16, 500, 0.5, 2024);
  inputs.train = std::move(split.train);
  inputs.test = std::move(split.test);
  inputs.partition = fal::dirichlet_partition(inputs.train, fal::PartitionSpec{std::nullopt, 10, 0});
  inputs.client_features.resize(10);
  const double typi = mean_final_accuracy(fal::Strategy::kTypiclust, inputs, dir);
  const double ent = mean_final_accuracy(fal::Strategy::kEntropy, inputs, dir);
  const double rnd = mean_final_accuracy(fal::Strategy::kRandom, inputs, dir);
  const bool ok = typi >= ent && typi >= rnd - 0.01;
  return {ok, "final-round accuracy typiclust " + fmt(typi) + ", entropy " + fmt(ent) + ", random " + fmt(rnd)};
}

Outcome heterogeneity_ordering() {
  const auto ds = fal::synth_dataset(10, 4, 625, 1.0, 7).train;
  if (ds.labels.size() != 5000) return {false, "expected N=5000, got " + std::to_string(ds.labels.size())};
  double sum_low = 0.0;
  double sum_high = 0.0;
  bool every_seed = true;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const double low = fal::mean_max_class_share(ds, fal::dirichlet_partition(ds, fal::PartitionSpec{0.1, 10, seed}));
    const double high = fal::mean_max_class_share(ds, fal::dirichlet_partition(ds, fal::PartitionSpec{1.0, 10, seed}));
    every_seed = every_seed && low > high;
    sum_low += low;
    sum_high += high;
  }
  const bool ok = sum_low > sum_high && every_seed;
  return {ok, "mean max-class share alpha=0.1 " + fmt(sum_low / 20) + " vs alpha=1.0 " + fmt(sum_high / 20) +
                  (every_seed ? ", higher on every seed" : ", not higher on every seed")};
}

Outcome budget_accounting() {
  auto split = fal::synth_dataset(5, 6, 60, 1.0, 3);
  const auto parts = fal::dirichlet_partition(split.train, fal::PartitionSpec{0.5, 4, 1});
  const std::size_t b = 3;
  const std::size_t rounds = 4;
  std::size_t checks = 0;
  for (const auto strategy : fal::all_strategies()) {
    fal::FederationConfig cfg;
    cfg.strategy = strategy;
    cfg.budget = b;
    cfg.seed = 11;
    cfg.train.local_epochs = 2;
    fal::FederationData data;
    data.train = &split.train;
    data.test = &split.test;
    auto global = fal::initial_global(split.train, cfg);
    auto clients = fal::make_clients(parts, split.train, cfg, global);
    for (std::size_t r = 1; r <= rounds; ++r) {
      fal::run_fal_round(clients, global, data, cfg, r);
      for (const auto& c : clients) {
        std::vector<std::size_t> both;
        std::set_intersection(c.labeled.begin(), c.labeled.end(), c.unlabeled.begin(), c.unlabeled.end(),
                              std::back_inserter(both));
        if (c.labeled.size() != r * b || !both.empty() ||
            c.labeled.size() + c.unlabeled.size() != c.partition.indices.size()) {
          return {false, fal::strategy_name(strategy) + ": client " + std::to_string(c.client_id) + " broke the budget"};
        }
        ++checks;
      }
    }
    // The experiment runner asserts the same accounting after every round.
    fal::ExperimentConfig ecfg;
    ecfg.synth = {5, 6, 60, 1.0, 3};
    ecfg.num_clients = 4;
    ecfg.alpha = "0.5";
    ecfg.strategy = strategy;
    ecfg.budget_mode = fal::BudgetMode::kExplicit;
    ecfg.explicit_budget = b;
    ecfg.rounds = rounds;
    ecfg.seeds = {0};
    ecfg.train.local_epochs = 2;
    ecfg.output_dir = scratch("budget");
    const auto out = fal::run_experiment(ecfg);
    if (out.runs[0].records.back().labeled_counts != std::vector<std::size_t>(4, rounds * b)) {
      return {false, fal::strategy_name(strategy) + ": runner labeled counts disagree"};
    }
  }
  return {true, std::to_string(checks) + " client-round checks over all strategies, |L| = r*b and L, U disjoint"};
}

int cli(const std::string& args) {
  const std::string cmd = std::string("\"") + FAL_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism() {
  const auto dir = scratch("determinism");
  const std::string d = "\"" + dir.string() + "\"";
  if (cli("synth --classes 4 --dim 6 --per-class 60 --seed 9 --out " + d) != 0) return {false, "synth failed"};
  const std::string base =
      "[data]\ntrain = train.csv\ntest = test.csv\n[partition]\nalpha = 0.5\nclients = 4\nseed = 2\n"
      "[train]\nlocal_epochs = 3\n[budget]\nper_round = 3\n[run]\nrounds = 4\nseeds = 0,1,2,3\n";
  std::ofstream(dir / "serial.conf") << base << "seed_threads = 1\nclient_threads = 1\n";
  std::ofstream(dir / "parallel.conf") << base << "seed_threads = 4\nclient_threads = 2\n";
  std::size_t compared = 0;
  for (const std::string strategy : {"typiclust", "badge", "logo"}) {
    for (const auto& [conf, out] : {std::pair{"serial.conf", "a"}, {"serial.conf", "b"}, {"parallel.conf", "c"}}) {
      if (cli("run --config " + d + "/" + conf + " --strategy " + strategy + " --out " + d + "/" + out) != 0) {
        return {false, "run " + strategy + " failed"};
      }
    }
    for (const std::string kind : {"results_", "selections_"}) {
      const std::string file = kind + strategy + ".csv";
      const auto a = slurp(dir / "a" / file);
      if (a.empty() || a != slurp(dir / "b" / file) || a != slurp(dir / "c" / file)) {
        return {false, file + " differs between runs"};
      }
      ++compared;
    }
  }
  return {true, std::to_string(compared) + " output files byte-identical across two serial runs and a parallel run"};
}

Outcome coreset_oracle() {
  std::mt19937_64 rng(1010);
  int matched = 0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 2 + rng() % 49;
    const std::size_t d = 1 + rng() % 5;
    const auto features = oracle::random_matrix(n, d, rng, 2.0);
    auto all = iota_vec(n);
    std::shuffle(all.begin(), all.end(), rng);
    const std::size_t n_labeled = rng() % std::min<std::size_t>(n - 1, 6);
    std::vector<std::size_t> labeled(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_labeled));
    std::vector<std::size_t> unlabeled(all.begin() + static_cast<std::ptrdiff_t>(n_labeled), all.end());
    std::sort(labeled.begin(), labeled.end());
    std::sort(unlabeled.begin(), unlabeled.end());
    const std::size_t budget = 1 + rng() % std::min<std::size_t>(unlabeled.size(), 12);

    // Alternate a linear head (embedding = inputs) and an MLP (embedding = hidden layer).
    const auto arch = t % 2 ? fal::Arch::mlp(6) : fal::Arch::linear();
    const auto model = fal::init_params(arch, d, 3, rng());
    fal::QueryContext ctx;
    ctx.features = &features;
    ctx.labeled = labeled;
    ctx.unlabeled = unlabeled;
    ctx.budget = budget;
    ctx.global_params = &model;
    const auto got = fal::coreset_query(ctx).selected;
    const auto ref =
        oracle::greedy_k_center(t % 2 ? fal::penultimate_embedding(model, features) : features, labeled, unlabeled, budget);
    if (got == ref) ++matched;
  }
  return {matched == 20, std::to_string(matched) + "/20 instances match the brute-force greedy selection"};
}

}  // namespace

int main() {
  std::cout << "fal acceptance" << std::endl;
  int failed = 0;
  failed += !run_criterion(1, "typicality oracle", 5.0, typicality_oracle);
  failed += !run_criterion(2, "gradient check", 10.0, gradient_check);
  failed += !run_criterion(3, "fedavg correctness", 0.0, fedavg_correctness);
  failed += !run_criterion(4, "t-test framework", 0.0, t_test_framework);
  failed += !run_criterion(5, "typicality shift", 30.0, typicality_shift);
  failed += !run_criterion(6, "directional cold start", 300.0, directional_cold_start);
  failed += !run_criterion(7, "heterogeneity ordering", 10.0, heterogeneity_ordering);
  failed += !run_criterion(8, "budget accounting", 0.0, budget_accounting);
  failed += !run_criterion(9, "determinism", 0.0, determinism);
  failed += !run_criterion(10, "coreset oracle", 0.0, coreset_oracle);
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed") << std::endl;
  return failed ? 1 : 0;
}
