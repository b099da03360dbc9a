// SPDX-License-Identifier: Apache-2.0

#include "fal/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "fal/error.hpp"

namespace fal {

namespace pt = boost::property_tree;

std::size_t ExperimentConfig::budget(int num_classes) const {
  switch (budget_mode) {
    case BudgetMode::kTiny: return static_cast<std::size_t>(num_classes);
    case BudgetMode::kSmall: return 3 * static_cast<std::size_t>(num_classes);
    case BudgetMode::kExplicit: return explicit_budget;
  }
  return 0;
}

void ExperimentConfig::validate() const {
  if (train_path.has_value() != test_path.has_value()) {
    throw ValidationError("config: data.train and data.test must be given together");
  }
  if (seeds.empty()) throw ValidationError("config: run.seeds must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ValidationError("config: run.seeds contains duplicates");
  }
  if (rounds < 1) throw ValidationError("config: run.rounds must be at least 1");
  if (budget_mode == BudgetMode::kExplicit && explicit_budget < 1) {
    throw ValidationError("config: budget.per_round must be positive");
  }
  if (num_clients < 1) throw ValidationError("config: partition.clients must be positive");
  if (geometry.typicality_k < 1) throw ValidationError("config: geometry.typicality_k must be positive");
  if (geometry.kmeans.max_iters < 1) throw ValidationError("config: geometry.kmeans_max_iters must be positive");
  if (!(geometry.kmeans.tol >= 0.0)) throw ValidationError("config: geometry.kmeans_tol must be non-negative");
  train.validate();
  if (!partition_path) PartitionSpec::parse_alpha(alpha, num_clients, partition_seed);
}

namespace {

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"data", {"train", "test", "synth_classes", "synth_dim", "synth_per_class", "synth_spread", "synth_seed"}},
      {"features", {}},  // client_<k> = path
      {"partition", {"file", "alpha", "clients", "seed"}},
      {"model", {"arch"}},
      {"train", {"learning_rate", "momentum", "weight_decay", "local_epochs", "batch_size"}},
      {"strategy", {"name", "selector", "logo_model", "logo_measure"}},
      {"budget", {"mode", "per_round"}},
      {"run", {"rounds", "seeds", "initial_labeled", "client_threads", "seed_threads", "weighting"}},
      {"geometry", {"typicality_k", "kmeans_max_iters", "kmeans_tol"}},
      {"output", {"dir"}},
  };
  return keys;
}

template <typename T>
T get_number(const pt::ptree& section, const std::string& key, T fallback, const std::string& where) {
  const auto v = section.get_optional<std::string>(key);
  if (!v) return fallback;
  if constexpr (std::is_floating_point_v<T>) {
    try {
      std::size_t used = 0;
      const double d = std::stod(*v, &used);
      if (used != v->size()) throw std::invalid_argument(*v);
      return d;
    } catch (const std::exception&) {
      throw ValidationError("config: " + where + "." + key + " is not a number: '" + *v + "'");
    }
  } else {
    return parse_number<T>(*v, "config: " + where + "." + key);
  }
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (auto cell : split(text, ',')) {
    while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
    while (!cell.empty() && cell.back() == ' ') cell.remove_suffix(1);
    if (cell.empty()) continue;
    out.push_back(parse_number<std::uint64_t>(cell, "seed list"));
  }
  return out;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }

  for (const auto& [section, body] : tree) {
    const auto it = known_keys().find(section);
    if (it == known_keys().end()) throw ValidationError("config: unknown section [" + section + "]");
    for (const auto& [key, value] : body) {
      const bool ok = section == "features" ? key.starts_with("client_") : it->second.contains(key);
      if (!ok) throw ValidationError("config: unknown key " + section + "." + key);
    }
  }

  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  auto section = [&](const std::string& name) {
    const auto child = tree.get_child_optional(name);
    return child ? *child : pt::ptree{};
  };

  ExperimentConfig cfg;
  const auto data = section("data");
  if (auto v = data.get_optional<std::string>("train")) cfg.train_path = resolve(*v);
  if (auto v = data.get_optional<std::string>("test")) cfg.test_path = resolve(*v);
  cfg.synth.num_classes = get_number<int>(data, "synth_classes", cfg.synth.num_classes, "data");
  cfg.synth.dim = get_number<std::size_t>(data, "synth_dim", cfg.synth.dim, "data");
  cfg.synth.per_class = get_number<std::size_t>(data, "synth_per_class", cfg.synth.per_class, "data");
  cfg.synth.spread = get_number<double>(data, "synth_spread", cfg.synth.spread, "data");
  cfg.synth.seed = get_number<std::uint64_t>(data, "synth_seed", cfg.synth.seed, "data");

  for (const auto& [key, value] : section("features")) {
    const auto k = parse_number<std::size_t>(std::string_view(key).substr(7), "config: features." + key);
    if (k >= cfg.client_feature_paths.size()) cfg.client_feature_paths.resize(k + 1);
    cfg.client_feature_paths[k] = resolve(value.data());
  }

  const auto part = section("partition");
  if (auto v = part.get_optional<std::string>("file")) cfg.partition_path = resolve(*v);
  cfg.alpha = part.get<std::string>("alpha", cfg.alpha);
  cfg.num_clients = get_number<std::size_t>(part, "clients", cfg.num_clients, "partition");
  cfg.partition_seed = get_number<std::uint64_t>(part, "seed", cfg.partition_seed, "partition");

  cfg.arch = Arch::parse(section("model").get<std::string>("arch", "linear"));

  const auto tr = section("train");
  cfg.train.learning_rate = get_number<double>(tr, "learning_rate", cfg.train.learning_rate, "train");
  cfg.train.momentum = get_number<double>(tr, "momentum", cfg.train.momentum, "train");
  cfg.train.weight_decay = get_number<double>(tr, "weight_decay", cfg.train.weight_decay, "train");
  cfg.train.local_epochs = get_number<std::size_t>(tr, "local_epochs", cfg.train.local_epochs, "train");
  cfg.train.batch_size = get_number<std::size_t>(tr, "batch_size", cfg.train.batch_size, "train");

  const auto st = section("strategy");
  cfg.strategy = parse_strategy(st.get<std::string>("name", "random"));
  cfg.selector = parse_selector(st.get<std::string>("selector", "global"));
  cfg.logo.model = parse_selector(st.get<std::string>("logo_model", "global"));
  const auto measure = st.get<std::string>("logo_measure", "margin");
  if (measure == "margin") {
    cfg.logo.measure = Uncertainty::kMargin;
  } else if (measure == "entropy") {
    cfg.logo.measure = Uncertainty::kEntropy;
  } else {
    throw ValidationError("config: strategy.logo_measure must be margin or entropy");
  }

  const auto bud = section("budget");
  const auto mode = bud.get<std::string>("mode", bud.get_optional<std::string>("per_round") ? "explicit" : "tiny");
  if (mode == "tiny") {
    cfg.budget_mode = BudgetMode::kTiny;
  } else if (mode == "small") {
    cfg.budget_mode = BudgetMode::kSmall;
  } else if (mode == "explicit") {
    cfg.budget_mode = BudgetMode::kExplicit;
  } else {
    throw ValidationError("config: budget.mode must be tiny, small or explicit");
  }
  cfg.explicit_budget = get_number<std::size_t>(bud, "per_round", 0, "budget");

  const auto run = section("run");
  cfg.rounds = get_number<std::size_t>(run, "rounds", cfg.rounds, "run");
  if (auto v = run.get_optional<std::string>("seeds")) cfg.seeds = parse_seed_list(*v);
  cfg.initial_labeled = get_number<std::size_t>(run, "initial_labeled", cfg.initial_labeled, "run");
  cfg.client_threads = std::max<std::size_t>(1, get_number<std::size_t>(run, "client_threads", 1, "run"));
  cfg.seed_threads = std::max<std::size_t>(1, get_number<std::size_t>(run, "seed_threads", 1, "run"));
  const auto weighting = run.get<std::string>("weighting", "labeled");
  if (weighting == "labeled") {
    cfg.weighting = AggregationWeight::kLabeled;
  } else if (weighting == "partition") {
    cfg.weighting = AggregationWeight::kPartition;
  } else {
    throw ValidationError("config: run.weighting must be labeled or partition");
  }

  const auto geo = section("geometry");
  cfg.geometry.typicality_k = get_number<std::size_t>(geo, "typicality_k", cfg.geometry.typicality_k, "geometry");
  cfg.geometry.kmeans.max_iters =
      get_number<std::size_t>(geo, "kmeans_max_iters", cfg.geometry.kmeans.max_iters, "geometry");
  cfg.geometry.kmeans.tol = get_number<double>(geo, "kmeans_tol", cfg.geometry.kmeans.tol, "geometry");

  if (auto v = section("output").get_optional<std::string>("dir")) cfg.output_dir = resolve(*v);

  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const auto base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  return parse_config(buf.str(), base);
}

ExperimentInputs prepare_inputs(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentInputs in;
  if (cfg.train_path) {
    in.train = load_dataset(*cfg.train_path);
    in.test = load_dataset(*cfg.test_path);
    if (in.train.dim() != in.test.dim()) throw ValidationError("train and test feature dimensions differ");
    in.test.num_classes = std::max(in.test.num_classes, in.train.num_classes);
    in.train.num_classes = in.test.num_classes;
  } else {
    auto split_ds = synth_dataset(cfg.synth.num_classes, cfg.synth.dim, cfg.synth.per_class, cfg.synth.spread,
                                  cfg.synth.seed);
    in.train = std::move(split_ds.train);
    in.test = std::move(split_ds.test);
  }
  if (cfg.partition_path) {
    in.partition = load_partition(*cfg.partition_path, in.train.size());
  } else {
    in.partition = dirichlet_partition(in.train, PartitionSpec::parse_alpha(cfg.alpha, cfg.num_clients,
                                                                            cfg.partition_seed));
  }

  in.client_features.resize(in.partition.size());
  for (std::size_t k = 0; k < cfg.client_feature_paths.size(); ++k) {
    if (!cfg.client_feature_paths[k]) continue;
    if (k >= in.partition.size()) throw ValidationError("features.client_" + std::to_string(k) + ": no such client");
    const FeatureDataset own = load_dataset(*cfg.client_feature_paths[k]);
    // Rows are matched to the client's partition through the dataset ids.
    std::map<std::int64_t, std::size_t> by_id;
    for (std::size_t i = 0; i < own.size(); ++i) by_id[own.ids[i]] = i;
    std::vector<std::size_t> order;
    for (auto row : in.partition[k].indices) {
      const auto it = by_id.find(in.train.ids[row]);
      if (it == by_id.end()) {
        throw ValidationError("features.client_" + std::to_string(k) + ": missing id " +
                              std::to_string(in.train.ids[row]));
      }
      order.push_back(it->second);
    }
    in.client_features[k] = select_rows(own.features, order);
  }
  return in;
}

std::string format_result_row(const std::string& strategy, std::uint64_t seed, const RoundRecord& rec) {
  std::string labeled;
  for (std::size_t k = 0; k < rec.labeled_counts.size(); ++k) {
    if (k) labeled += ';';
    labeled += std::to_string(rec.labeled_counts[k]);
  }
  return strategy + ',' + std::to_string(seed) + ',' + std::to_string(rec.round) + ',' + labeled + ',' +
         format_double(rec.accuracy) + ',' + format_double(rec.balanced_recall);
}

namespace {

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << content;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct SeedFiles {
  fs::path results;
  fs::path selections;
};

SeedRun run_one_seed(const ExperimentConfig& cfg, const ExperimentInputs& in, std::uint64_t seed,
                     std::size_t budget, const SeedFiles& files) {
  FederationConfig fc;
  fc.arch = cfg.arch;
  fc.train = cfg.train;
  fc.strategy = cfg.strategy;
  fc.selector = cfg.selector;
  fc.geometry = cfg.geometry;
  fc.logo = cfg.logo;
  fc.budget = budget;
  fc.weighting = cfg.weighting;
  fc.seed = seed;
  fc.threads = cfg.client_threads;

  FederationData data;
  data.train = &in.train;
  data.test = &in.test;
  for (const auto& f : in.client_features) data.client_features.push_back(f ? &*f : nullptr);

  ModelParams global = initial_global(in.train, fc);
  auto clients = make_clients(in.partition, in.train, fc, global, cfg.initial_labeled);

  const std::string name = strategy_name(cfg.strategy);
  std::ofstream results(files.results, std::ios::binary | std::ios::trunc);
  std::ofstream selections(files.selections, std::ios::binary | std::ios::trunc);
  if (!results || !selections) throw RuntimeFailure("cannot write temporary results for seed " + std::to_string(seed));

  SeedRun run;
  run.seed = seed;
  for (std::size_t r = 1; r <= cfg.rounds; ++r) {
    RoundRecord rec = run_fal_round(clients, global, data, fc, r);

    // Budget accounting holds for every client after every round.
    const std::size_t expected = cfg.initial_labeled + r * budget;
    for (const auto& c : clients) {
      c.check_invariants();
      if (c.labeled.size() != expected) {
        throw RuntimeFailure("client " + std::to_string(c.client_id) + " holds " + std::to_string(c.labeled.size()) +
                             " labels after round " + std::to_string(r) + ", expected " + std::to_string(expected));
      }
    }

    results << format_result_row(name, seed, rec) << '\n';
    for (std::size_t k = 0; k < rec.selections.size(); ++k) {
      for (auto row : rec.selections[k]) {
        selections << name << ',' << seed << ',' << r << ',' << clients[k].client_id << ',' << row << ','
                   << (rec.fallbacks[k] ? 1 : 0) << '\n';
      }
    }
    results.flush();
    selections.flush();
    run.records.push_back(std::move(rec));
  }
  return run;
}

}  // namespace

ExperimentOutput run_experiment(const ExperimentConfig& cfg) { return run_experiment(cfg, prepare_inputs(cfg)); }

ExperimentOutput run_experiment(const ExperimentConfig& cfg, const ExperimentInputs& in) {
  cfg.validate();
  const std::size_t budget = cfg.budget(in.train.num_classes);
  for (const auto& p : in.partition) {
    if (p.indices.size() < cfg.initial_labeled + cfg.rounds * budget) {
      throw ValidationError("client " + std::to_string(p.client_id) + " has " + std::to_string(p.indices.size()) +
                            " rows, fewer than the " + std::to_string(cfg.initial_labeled + cfg.rounds * budget) +
                            " needed for " + std::to_string(cfg.rounds) + " rounds at budget " +
                            std::to_string(budget));
    }
  }

  fs::create_directories(cfg.output_dir);
  const std::string name = strategy_name(cfg.strategy);
  ExperimentOutput out;
  out.budget = budget;
  out.results_file = cfg.output_dir / ("results_" + name + ".csv");
  out.selections_file = cfg.output_dir / ("selections_" + name + ".csv");

  const std::size_t n_seeds = cfg.seeds.size();
  std::vector<SeedFiles> files(n_seeds);
  for (std::size_t s = 0; s < n_seeds; ++s) {
    const std::string tag = name + ".seed" + std::to_string(cfg.seeds[s]) + ".tmp";
    files[s] = {cfg.output_dir / ("results_" + tag), cfg.output_dir / ("selections_" + tag)};
  }

  out.runs.resize(n_seeds);
  std::vector<std::exception_ptr> errors(n_seeds);
  auto work = [&](std::size_t s) {
    try {
      out.runs[s] = run_one_seed(cfg, in, cfg.seeds[s], budget, files[s]);
    } catch (...) {
      errors[s] = std::current_exception();
    }
  };
  const std::size_t workers = std::min(cfg.seed_threads, n_seeds);
  if (workers <= 1) {
    for (std::size_t s = 0; s < n_seeds; ++s) work(s);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t s = t; s < n_seeds; s += workers) work(s);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  // Merge per-seed files in configured seed order.
  std::string results = std::string(kResultsHeader) + '\n';
  std::string selections = "strategy,seed,round,client_id,row_index,fallback\n";
  for (const auto& f : files) {
    results += read_file(f.results);
    selections += read_file(f.selections);
    fs::remove(f.results);
    fs::remove(f.selections);
  }
  write_file(out.results_file, results);
  write_file(out.selections_file, selections);
  return out;
}

std::vector<ResultRow> load_results(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader) {
    throw ValidationError(path.string() + ": not a results file");
  }
  std::vector<ResultRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string at = path.string() + ":" + std::to_string(line_no);
    const auto cells = split(line, ',');
    if (cells.size() != 6) throw ValidationError(at + ": expected 6 columns");
    ResultRow row;
    row.strategy = std::string(cells[0]);
    row.seed = parse_number<std::uint64_t>(cells[1], at);
    row.round = parse_number<std::size_t>(cells[2], at);
    for (auto c : split(cells[3], ';')) row.labeled_per_client.push_back(parse_number<std::size_t>(c, at));
    row.accuracy = parse_double(cells[4], at);
    row.balanced_recall = parse_double(cells[5], at);
    for (double v : {row.accuracy, row.balanced_recall}) {
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(at + ": metric outside [0, 1]");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError(path.string() + ": no result rows");
  return rows;
}

std::vector<RunResult> to_run_results(const std::vector<ResultRow>& rows, Metric metric) {
  std::map<std::uint64_t, std::vector<const ResultRow*>> by_seed;
  std::string strategy;
  for (const auto& r : rows) {
    if (strategy.empty()) strategy = r.strategy;
    if (r.strategy != strategy) throw ValidationError("results mix strategies " + strategy + " and " + r.strategy);
    by_seed[r.seed].push_back(&r);
  }
  std::vector<RunResult> out;
  for (auto& [seed, list] : by_seed) {
    std::sort(list.begin(), list.end(), [](auto* a, auto* b) { return a->round < b->round; });
    RunResult rr;
    rr.strategy = strategy;
    rr.seed = seed;
    rr.metric = metric;
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (list[i]->round != i + 1) throw ValidationError("results for seed " + std::to_string(seed) + " skip a round");
      rr.series.push_back(metric == Metric::kAccuracy ? list[i]->accuracy : list[i]->balanced_recall);
    }
    out.push_back(std::move(rr));
  }
  const std::size_t rounds = out.front().series.size();
  for (const auto& rr : out) {
    if (rr.series.size() != rounds) throw ValidationError("results: seeds have different round counts");
  }
  return out;
}

ComparisonSet compare_results(const std::vector<std::pair<fs::path, fs::path>>& pairs, Metric metric,
                              double threshold) {
  if (pairs.empty()) throw ValidationError("compare: no result pairs");
  ComparisonSet set;
  for (std::size_t c = 0; c < pairs.size(); ++c) {
    const auto ri = to_run_results(load_results(pairs[c].first), metric);
    const auto rj = to_run_results(load_results(pairs[c].second), metric);
    set.configurations.push_back("config" + std::to_string(c));
    set.reports.push_back(win_rate(ri, rj, threshold));
    set.mean_win_rate += set.reports.back().win_rate;
    set.mean_defeat_rate += set.reports.back().defeat_rate;
  }
  set.mean_win_rate /= static_cast<double>(pairs.size());
  set.mean_defeat_rate /= static_cast<double>(pairs.size());
  return set;
}

void write_comparison(const ComparisonSet& set, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::string rounds = "configuration,pair,round,t,win_ij,win_ji\n";
  std::string summary = "configuration,strategy_i,strategy_j,metric,threshold,rounds,win_rate,defeat_rate\n";
  for (std::size_t c = 0; c < set.reports.size(); ++c) {
    const auto& rep = set.reports[c];
    const std::string pair = rep.strategy_i + "_vs_" + rep.strategy_j;
    for (std::size_t r = 0; r < rep.t_scores.size(); ++r) {
      rounds += set.configurations[c] + ',' + pair + ',' + std::to_string(r + 1) + ',' +
                format_double(rep.t_scores[r]) + ',' + (rep.wins[r] ? "1" : "0") + ',' +
                (rep.defeats[r] ? "1" : "0") + '\n';
    }
    summary += set.configurations[c] + ',' + rep.strategy_i + ',' + rep.strategy_j + ',' + metric_name(rep.metric) +
               ',' + format_double(rep.threshold) + ',' + std::to_string(rep.t_scores.size()) + ',' +
               format_double(rep.win_rate) + ',' + format_double(rep.defeat_rate) + '\n';
  }
  const auto& first = set.reports.front();
  summary += "mean," + first.strategy_i + ',' + first.strategy_j + ',' + metric_name(first.metric) + ',' +
             format_double(first.threshold) + ",," + format_double(set.mean_win_rate) + ',' +
             format_double(set.mean_defeat_rate) + '\n';
  write_file(out_dir / "comparison_rounds.csv", rounds);
  write_file(out_dir / "comparison_summary.csv", summary);
}

std::vector<ComparisonSummaryRow> load_comparison_summary(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);
  if (line != "configuration,strategy_i,strategy_j,metric,threshold,rounds,win_rate,defeat_rate") {
    throw ValidationError(path.string() + ": not a comparison summary");
  }
  std::vector<ComparisonSummaryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != 8) throw ValidationError(path.string() + ": expected 8 columns");
    ComparisonSummaryRow r;
    r.configuration = std::string(cells[0]);
    r.strategy_i = std::string(cells[1]);
    r.strategy_j = std::string(cells[2]);
    r.metric = std::string(cells[3]);
    r.threshold = parse_double(cells[4], path.string());
    r.rounds = cells[5].empty() ? 0 : parse_number<std::size_t>(cells[5], path.string());
    r.win_rate = parse_double(cells[6], path.string());
    r.defeat_rate = parse_double(cells[7], path.string());
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<ComparisonRoundRow> load_comparison_rounds(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);
  if (line != "configuration,pair,round,t,win_ij,win_ji") throw ValidationError(path.string() + ": not a round report");
  std::vector<ComparisonRoundRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != 6) throw ValidationError(path.string() + ": expected 6 columns");
    ComparisonRoundRow r;
    r.configuration = std::string(cells[0]);
    r.pair = std::string(cells[1]);
    r.round = parse_number<std::size_t>(cells[2], path.string());
    r.t = parse_double(cells[3], path.string());
    r.win_ij = cells[4] == "1";
    r.win_ji = cells[5] == "1";
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_shift_report(const ShiftReport& rep, const std::vector<ClientPartition>& parts, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::string hist = "bin,bin_lo,bin_hi,centralized,per_client\n";
  for (std::size_t b = 0; b < rep.centralized_hist.counts.size(); ++b) {
    hist += std::to_string(b) + ',' + format_double(rep.centralized_hist.edges[b]) + ',' +
            format_double(rep.centralized_hist.edges[b + 1]) + ',' + std::to_string(rep.centralized_hist.counts[b]) +
            ',' + std::to_string(rep.per_client_hist.counts[b]) + '\n';
  }
  write_file(out_dir / "shift_histogram.csv", hist);

  std::string summary = "key,value\n";
  summary += "neighbours," + std::to_string(rep.neighbours) + '\n';
  summary += "threshold," + format_double(rep.threshold) + '\n';
  summary += "rows," + std::to_string(rep.centralized.size()) + '\n';
  summary += "centralized_mean," + format_double(rep.centralized_mean) + '\n';
  summary += "per_client_mean," + format_double(rep.per_client_mean) + '\n';
  summary += "above_threshold," + std::to_string(rep.above_threshold) + '\n';
  summary += "retained," + std::to_string(rep.retained) + '\n';
  summary += "retention," + format_double(rep.retention) + '\n';
  write_file(out_dir / "shift_summary.csv", summary);

  std::vector<std::size_t> owner(rep.centralized.size(), 0);
  for (const auto& p : parts) {
    for (auto i : p.indices) owner[i] = p.client_id;
  }
  std::string points = "row_index,client_id,centralized,per_client\n";
  for (std::size_t i = 0; i < rep.centralized.size(); ++i) {
    points += std::to_string(i) + ',' + std::to_string(owner[i]) + ',' + format_double(rep.centralized[i]) + ',' +
              format_double(rep.per_client[i]) + '\n';
  }
  write_file(out_dir / "shift_points.csv", points);
}

std::vector<HistogramRow> load_shift_histogram(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);
  if (line != "bin,bin_lo,bin_hi,centralized,per_client") throw ValidationError(path.string() + ": not a histogram");
  std::vector<HistogramRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != 5) throw ValidationError(path.string() + ": expected 5 columns");
    rows.push_back({parse_number<std::size_t>(cells[0], path.string()), parse_double(cells[1], path.string()),
                    parse_double(cells[2], path.string()), parse_number<std::size_t>(cells[3], path.string()),
                    parse_number<std::size_t>(cells[4], path.string())});
  }
  return rows;
}

std::vector<CurvePoint> curve_points(const std::vector<ResultRow>& rows) {
  if (rows.empty()) throw ValidationError("plotdata: empty results");
  std::vector<CurvePoint> out;
  for (const Metric metric : {Metric::kAccuracy, Metric::kBalancedRecall}) {
    std::map<std::pair<std::string, std::size_t>, std::vector<double>> groups;
    for (const auto& r : rows) {
      groups[{r.strategy, r.round}].push_back(metric == Metric::kAccuracy ? r.accuracy : r.balanced_recall);
    }
    for (const auto& [key, values] : groups) {
      CurvePoint p;
      p.strategy = key.first;
      p.metric = metric_name(metric);
      p.round = key.second;
      p.seeds = values.size();
      for (double v : values) p.mean += v;
      p.mean /= static_cast<double>(values.size());
      if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - p.mean) * (v - p.mean);
        const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
        p.stderr_ = sd / std::sqrt(static_cast<double>(values.size()));
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::vector<fs::path> write_plot_data(const std::vector<fs::path>& inputs, const fs::path& out_dir) {
  if (inputs.empty()) throw ValidationError("plotdata: no input files");
  std::vector<ResultRow> results;
  std::vector<ComparisonSummaryRow> bars;
  std::vector<std::pair<std::string, std::vector<HistogramRow>>> hists;
  for (const auto& path : inputs) {
    std::ifstream in(path);
    if (!in) throw ValidationError("plotdata: cannot open " + path.string());
    std::string header;
    std::getline(in, header);
    if (header == kResultsHeader) {
      auto rows = load_results(path);
      results.insert(results.end(), rows.begin(), rows.end());
    } else if (header.starts_with("configuration,strategy_i")) {
      auto rows = load_comparison_summary(path);
      bars.insert(bars.end(), rows.begin(), rows.end());
    } else if (header.starts_with("bin,bin_lo")) {
      hists.emplace_back(path.string(), load_shift_histogram(path));
    } else {
      throw ValidationError("plotdata: unrecognised file " + path.string());
    }
  }

  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  if (!results.empty()) {
    std::string csv = "strategy,metric,round,mean,stderr,seeds\n";
    for (const auto& p : curve_points(results)) {
      csv += p.strategy + ',' + p.metric + ',' + std::to_string(p.round) + ',' + format_double(p.mean) + ',' +
             format_double(p.stderr_) + ',' + std::to_string(p.seeds) + '\n';
    }
    written.push_back(out_dir / "curves.csv");
    write_file(written.back(), csv);
  }
  if (!bars.empty()) {
    std::string csv = "configuration,strategy_i,strategy_j,metric,win_rate,defeat_rate\n";
    for (const auto& b : bars) {
      csv += b.configuration + ',' + b.strategy_i + ',' + b.strategy_j + ',' + b.metric + ',' +
             format_double(b.win_rate) + ',' + format_double(b.defeat_rate) + '\n';
    }
    written.push_back(out_dir / "win_rates.csv");
    write_file(written.back(), csv);
  }
  if (!hists.empty()) {
    std::string csv = "source,bin_lo,bin_hi,centralized_fraction,per_client_fraction\n";
    for (const auto& [source, rows] : hists) {
      std::size_t total_c = 0;
      std::size_t total_p = 0;
      for (const auto& r : rows) {
        total_c += r.centralized;
        total_p += r.per_client;
      }
      for (const auto& r : rows) {
        const double fc = total_c ? static_cast<double>(r.centralized) / static_cast<double>(total_c) : 0.0;
        const double fp = total_p ? static_cast<double>(r.per_client) / static_cast<double>(total_p) : 0.0;
        csv += source + ',' + format_double(r.lo) + ',' + format_double(r.hi) + ',' + format_double(fc) + ',' +
               format_double(fp) + '\n';
      }
    }
    written.push_back(out_dir / "typicality_hist.csv");
    write_file(written.back(), csv);
  }
  return written;
}

}  // namespace fal
