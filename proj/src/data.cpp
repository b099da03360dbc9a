// SPDX-License-Identifier: Apache-2.0

#include "fal/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "fal/csv.hpp"
#include "fal/error.hpp"
#include "fal/rng.hpp"

namespace fal {

void FeatureDataset::validate() const {
  const std::size_t n = labels.size();
  if (ids.size() != n || features.rows != n) {
    throw ValidationError("dataset: ids, labels and feature rows differ in length");
  }
  if (num_classes < 1) throw ValidationError("dataset: class count must be positive");
  for (double v : features.data) {
    if (!std::isfinite(v)) throw ValidationError("dataset: non-finite feature value");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw ValidationError("dataset: label out of range");
  }
  std::unordered_set<std::int64_t> seen;
  for (auto id : ids) {
    if (id < 0) throw ValidationError("dataset: negative id");
    if (!seen.insert(id).second) throw ValidationError("dataset: duplicate id " + std::to_string(id));
  }
}

std::vector<std::size_t> FeatureDataset::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

PartitionSpec PartitionSpec::parse_alpha(const std::string& text, std::size_t num_clients,
                                         std::uint64_t seed) {
  PartitionSpec spec;
  spec.num_clients = num_clients;
  spec.seed = seed;
  if (text == "uniform" || text == "inf") return spec;
  double a = 0.0;
  try {
    std::size_t used = 0;
    a = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
  } catch (const std::exception&) {
    throw ValidationError("invalid alpha '" + text + "'");
  }
  if (!(a > 0.0) || !std::isfinite(a)) throw ValidationError("alpha must be positive");
  spec.alpha = a;
  return spec;
}

FeatureDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset file " + path.string());
  const std::string where = path.string();

  std::string line;
  if (!std::getline(in, line)) throw ValidationError(where + ": empty file");
  auto header = split(line, ',');
  if (header.size() < 2 || header[0] != "id" || header[1] != "label") {
    throw ValidationError(where + ": header must start with id,label");
  }
  std::optional<int> declared_classes;
  if (header.back().starts_with("#classes=")) {
    declared_classes = parse_number<int>(header.back().substr(9), where);
    header.pop_back();
  }
  const std::size_t dim = header.size() - 2;

  FeatureDataset ds;
  std::vector<double> values;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    const std::string at = where + ":" + std::to_string(line_no);
    if (cells.size() != dim + 2) throw ValidationError(at + ": ragged row");
    ds.ids.push_back(parse_number<std::int64_t>(cells[0], at));
    ds.labels.push_back(parse_number<int>(cells[1], at));
    for (std::size_t k = 0; k < dim; ++k) values.push_back(parse_number<double>(cells[k + 2], at));
  }

  ds.features.rows = ds.labels.size();
  ds.features.cols = dim;
  ds.features.data = std::move(values);
  if (declared_classes) {
    ds.num_classes = *declared_classes;
  } else {
    const auto mx = std::max_element(ds.labels.begin(), ds.labels.end());
    ds.num_classes = mx == ds.labels.end() ? 1 : *mx + 1;
  }
  ds.validate();
  return ds;
}

void save_dataset(const FeatureDataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ostringstream out;
  out << "id,label";
  for (std::size_t k = 0; k < ds.dim(); ++k) out << ",f" << k;
  out << ",#classes=" << ds.num_classes << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.ids[i] << ',' << ds.labels[i];
    for (double v : ds.features.row(i)) out << ',' << format_double(v);
    out << '\n';
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw ValidationError("cannot write " + path.string());
  file << out.str();
}

SynthSplit synth_dataset(int num_classes, std::size_t dim, std::size_t per_class, double spread,
                         std::uint64_t seed) {
  if (num_classes < 2) throw ValidationError("synth: need at least two classes");
  if (dim < 1) throw ValidationError("synth: dimension must be positive");
  if (per_class < 2) throw ValidationError("synth: per_class must be at least 2 to split");
  if (!(spread >= 0.0) || !std::isfinite(spread)) throw ValidationError("synth: spread must be >= 0");

  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const auto n_classes = static_cast<std::size_t>(num_classes);
  Matrix means(n_classes, dim);
  for (double& v : means.data) v = normal(rng);

  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(per_class))), 1, per_class - 1);
  const std::size_t n_test = per_class - n_train;

  SynthSplit out;
  for (auto* part : {&out.train, &out.test}) {
    const std::size_t rows = n_classes * (part == &out.train ? n_train : n_test);
    part->num_classes = num_classes;
    part->features = Matrix(rows, dim);
    part->ids.reserve(rows);
    part->labels.reserve(rows);
  }

  std::int64_t next_id = 0;
  std::size_t train_row = 0;
  std::size_t test_row = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t s = 0; s < per_class; ++s) {
      const bool is_train = s < n_train;
      FeatureDataset& dst = is_train ? out.train : out.test;
      std::size_t& r = is_train ? train_row : test_row;
      auto row = dst.features.row(r);
      for (std::size_t k = 0; k < dim; ++k) {
        const double noise = normal(rng);
        row[k] = means(c, k) + spread * noise;
      }
      dst.ids.push_back(next_id++);
      dst.labels.push_back(static_cast<int>(c));
      ++r;
    }
  }
  return out;
}

namespace {

std::vector<std::size_t> client_quotas(std::size_t n, std::size_t k) {
  std::vector<std::size_t> q(k, n / k);
  for (std::size_t i = 0; i < n % k; ++i) ++q[i];
  return q;
}

// Largest-remainder rounding of quota * share, ties to the lower class.
std::vector<std::size_t> proportional_counts(std::size_t quota, const std::vector<double>& share) {
  std::vector<std::size_t> counts(share.size());
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < share.size(); ++c) {
    const double exact = static_cast<double>(quota) * share[c];
    counts[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[c];
    rema.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < quota; ++i, ++assigned) ++counts[rema[i % rema.size()].second];
  return counts;
}

}  // namespace

std::vector<ClientPartition> dirichlet_partition(const FeatureDataset& ds, const PartitionSpec& spec) {
  const std::size_t n = ds.size();
  const std::size_t k = spec.num_clients;
  if (k < 1) throw ValidationError("partition: need at least one client");
  if (k > n) throw ValidationError("partition: more clients than rows");
  if (spec.alpha && !(*spec.alpha > 0.0)) throw ValidationError("partition: alpha must be positive");

  const auto n_classes = static_cast<std::size_t>(ds.num_classes);
  Rng rng = make_rng(derive_seed(spec.seed, 0, 0, Purpose::kPartition));

  // Shuffled per-class pools; rows are taken from the back.
  std::vector<std::vector<std::size_t>> pools(n_classes);
  for (std::size_t i = 0; i < n; ++i) pools[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  for (auto& pool : pools) {
    for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[uniform_index(rng, i)]);
  }

  const auto quotas = client_quotas(n, k);
  std::vector<ClientPartition> parts(k);

  auto take = [&](std::size_t client, std::size_t c) {
    parts[client].indices.push_back(pools[c].back());
    pools[c].pop_back();
  };

  if (spec.uniform()) {
    std::vector<double> share(n_classes);
    const auto counts = ds.class_counts();
    for (std::size_t c = 0; c < n_classes; ++c) {
      share[c] = static_cast<double>(counts[c]) / static_cast<double>(n);
    }
    for (std::size_t client = 0; client < k; ++client) {
      auto want = proportional_counts(quotas[client], share);
      std::size_t deficit = 0;
      for (std::size_t c = 0; c < n_classes; ++c) {
        const std::size_t got = std::min(want[c], pools[c].size());
        deficit += want[c] - got;
        for (std::size_t t = 0; t < got; ++t) take(client, c);
      }
      // Rounding can overdraw a pool; cover the shortfall from the fullest pools.
      while (deficit-- > 0) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < n_classes; ++c) {
          if (pools[c].size() > pools[best].size()) best = c;
        }
        take(client, best);
      }
    }
  } else {
    std::gamma_distribution<double> gamma(*spec.alpha, 1.0);
    for (std::size_t client = 0; client < k; ++client) {
      std::vector<double> p(n_classes);
      for (double& v : p) v = gamma(rng);
      for (std::size_t slot = 0; slot < quotas[client]; ++slot) {
        double total = 0.0;
        for (std::size_t c = 0; c < n_classes; ++c) {
          if (!pools[c].empty()) total += p[c];
        }
        // All mass sits on exhausted classes (or underflowed): fall back to pool sizes.
        const bool by_pool = !(total > 0.0);
        if (by_pool) {
          total = 0.0;
          for (const auto& pool : pools) total += static_cast<double>(pool.size());
        }
        const double u = uniform_unit(rng) * total;
        double acc = 0.0;
        std::size_t chosen = n_classes;
        std::size_t last_open = n_classes;
        for (std::size_t c = 0; c < n_classes; ++c) {
          if (pools[c].empty()) continue;
          last_open = c;
          acc += by_pool ? static_cast<double>(pools[c].size()) : p[c];
          if (u < acc) {
            chosen = c;
            break;
          }
        }
        if (chosen == n_classes) chosen = last_open;
        take(client, chosen);
      }
    }
  }

  for (std::size_t client = 0; client < k; ++client) {
    parts[client].client_id = client;
    std::sort(parts[client].indices.begin(), parts[client].indices.end());
  }
  return parts;
}

void save_partition(const std::vector<ClientPartition>& parts, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "client_id,row_index\n";
  for (const auto& p : parts) {
    for (auto idx : p.indices) out << p.client_id << ',' << idx << '\n';
  }
}

std::vector<ClientPartition> load_partition(const std::filesystem::path& path, std::size_t num_rows) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open partition file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "client_id,row_index") {
    throw ValidationError(path.string() + ": expected header client_id,row_index");
  }
  std::vector<ClientPartition> parts;
  std::vector<bool> seen(num_rows, false);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    const std::string at = path.string() + ":" + std::to_string(line_no);
    if (cells.size() != 2) throw ValidationError(at + ": expected two columns");
    const auto client = parse_number<std::size_t>(cells[0], at);
    const auto row = parse_number<std::size_t>(cells[1], at);
    if (row >= num_rows) throw ValidationError(at + ": row index out of range");
    if (seen[row]) throw ValidationError(at + ": row assigned twice");
    seen[row] = true;
    if (client >= parts.size()) parts.resize(client + 1);
    parts[client].indices.push_back(row);
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw ValidationError(path.string() + ": partition does not cover every row");
  }
  for (std::size_t c = 0; c < parts.size(); ++c) {
    if (parts[c].indices.empty()) throw ValidationError(path.string() + ": empty client " + std::to_string(c));
    parts[c].client_id = c;
    std::sort(parts[c].indices.begin(), parts[c].indices.end());
  }
  return parts;
}

std::vector<std::vector<std::size_t>> partition_class_counts(
    const FeatureDataset& ds, const std::vector<ClientPartition>& parts) {
  std::vector<std::vector<std::size_t>> table(
      parts.size(), std::vector<std::size_t>(static_cast<std::size_t>(ds.num_classes), 0));
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (auto idx : parts[k].indices) ++table[k][static_cast<std::size_t>(ds.labels[idx])];
  }
  return table;
}

double mean_max_class_share(const FeatureDataset& ds, const std::vector<ClientPartition>& parts) {
  const auto table = partition_class_counts(ds, parts);
  double acc = 0.0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto mx = *std::max_element(table[k].begin(), table[k].end());
    acc += static_cast<double>(mx) / static_cast<double>(parts[k].indices.size());
  }
  return acc / static_cast<double>(parts.size());
}

FeatureDataset subset(const FeatureDataset& ds, const std::vector<std::size_t>& rows) {
  FeatureDataset out;
  out.num_classes = ds.num_classes;
  out.features = select_rows(ds.features, rows);
  for (auto r : rows) {
    out.ids.push_back(ds.ids[r]);
    out.labels.push_back(ds.labels[r]);
  }
  return out;
}

}  // namespace fal
