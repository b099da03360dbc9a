// SPDX-License-Identifier: Apache-2.0

#include "fal/federation.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <exception>
#include <thread>

#include "fal/error.hpp"
#include "fal/evaluation.hpp"
#include "fal/rng.hpp"

namespace fal {

void ClientState::check_invariants() const {
  if (!std::is_sorted(labeled.begin(), labeled.end()) || !std::is_sorted(unlabeled.begin(), unlabeled.end())) {
    throw RuntimeFailure("client " + std::to_string(client_id) + ": index sets not sorted");
  }
  std::vector<std::size_t> merged;
  merged.reserve(labeled.size() + unlabeled.size());
  std::merge(labeled.begin(), labeled.end(), unlabeled.begin(), unlabeled.end(), std::back_inserter(merged));
  if (std::adjacent_find(merged.begin(), merged.end()) != merged.end()) {
    throw RuntimeFailure("client " + std::to_string(client_id) + ": labeled and unlabeled sets overlap");
  }
  if (merged != partition.indices) {
    throw RuntimeFailure("client " + std::to_string(client_id) + ": labeled and unlabeled do not cover the partition");
  }
}

ClientState annotate(ClientState client, std::span<const std::size_t> selected, std::size_t budget) {
  if (selected.size() != budget) {
    throw ValidationError("annotate: expected " + std::to_string(budget) + " rows, got " +
                          std::to_string(selected.size()));
  }
  std::vector<std::size_t> picks(selected.begin(), selected.end());
  std::sort(picks.begin(), picks.end());
  if (std::adjacent_find(picks.begin(), picks.end()) != picks.end()) {
    throw ValidationError("annotate: duplicate selection");
  }
  if (!std::includes(client.unlabeled.begin(), client.unlabeled.end(), picks.begin(), picks.end())) {
    throw ValidationError("annotate: selected row not in the unlabeled set");
  }
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
  std::set_union(client.labeled.begin(), client.labeled.end(), picks.begin(), picks.end(),
                 std::back_inserter(labeled));
  std::set_difference(client.unlabeled.begin(), client.unlabeled.end(), picks.begin(), picks.end(),
                      std::back_inserter(unlabeled));
  client.labeled = std::move(labeled);
  client.unlabeled = std::move(unlabeled);
  return client;
}

ModelParams fedavg(std::span<const ModelParams> params, std::span<const double> weights) {
  if (params.empty()) throw ValidationError("fedavg: no entries");
  if (params.size() != weights.size()) throw ValidationError("fedavg: one weight per entry required");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("fedavg: weights must be finite and non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw ValidationError("fedavg: all weights are zero");
  for (const auto& p : params) {
    if (!p.same_shape(params.front())) throw ValidationError("fedavg: architecture mismatch");
  }

  // Averaging offsets from the first entry keeps identical inputs exact and
  // makes equal-weight opposites cancel to zero.
  const ModelParams& base = params.front();
  ModelParams out = base;
  for (std::size_t k = 1; k < params.size(); ++k) {
    const double w = weights[k] / total;
    for (std::size_t li = 0; li < out.layers.size(); ++li) {
      auto add = [w](std::vector<double>& dst, const std::vector<double>& src, const std::vector<double>& ref) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * (src[i] - ref[i]);
      };
      add(out.layers[li].weight.data, params[k].layers[li].weight.data, base.layers[li].weight.data);
      add(out.layers[li].bias, params[k].layers[li].bias, base.layers[li].bias);
    }
  }
  return out;
}

namespace {

std::vector<int> labels_of(const FeatureDataset& ds, const std::vector<std::size_t>& rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(ds.labels[r]);
  return out;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items must write
// only to their own slot, so the outcome is independent of scheduling.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) run(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

ModelParams train_local_only(ClientState& client, const FeatureDataset& train, const Arch& arch,
                             const TrainConfig& cfg, std::uint64_t init_seed) {
  if (client.labeled.empty()) throw ValidationError("train_local_only: empty labeled set");
  const ModelParams fresh = init_params(arch, train.dim(), static_cast<std::size_t>(train.num_classes), init_seed);
  const Matrix x = select_rows(train.features, client.labeled);
  client.local_only_params = sgd_train(fresh, x, labels_of(train, client.labeled), cfg);
  return *client.local_only_params;
}

ModelParams initial_global(const FeatureDataset& train, const FederationConfig& cfg) {
  return init_params(cfg.arch, train.dim(), static_cast<std::size_t>(train.num_classes),
                     derive_seed(cfg.seed, 0, 0, Purpose::kGlobalInit));
}

std::vector<ClientState> make_clients(const std::vector<ClientPartition>& parts, const FeatureDataset& train,
                                      const FederationConfig& cfg, const ModelParams& global,
                                      std::size_t initial_labeled) {
  std::vector<ClientState> clients;
  for (const auto& p : parts) {
    if (p.indices.size() < initial_labeled) {
      throw ValidationError("client " + std::to_string(p.client_id) + " is smaller than the initial labeled set");
    }
    ClientState c;
    c.client_id = p.client_id;
    c.partition = p;
    c.local_params = global;
    std::vector<std::size_t> pool = p.indices;
    Rng rng = make_rng(derive_seed(cfg.seed, p.client_id, 0, Purpose::kInitialLabels));
    for (std::size_t i = 0; i < initial_labeled; ++i) {
      std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
    }
    c.labeled.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(initial_labeled));
    c.unlabeled.assign(pool.begin() + static_cast<std::ptrdiff_t>(initial_labeled), pool.end());
    std::sort(c.labeled.begin(), c.labeled.end());
    std::sort(c.unlabeled.begin(), c.unlabeled.end());

    if (cfg.wants_local_only()) {
      const std::uint64_t init_seed = derive_seed(cfg.seed, p.client_id, 0, Purpose::kLocalOnlyInit);
      if (c.labeled.empty()) {
        // Cold start: the local-only model is an untrained initialisation.
        c.local_only_params =
            init_params(cfg.arch, train.dim(), static_cast<std::size_t>(train.num_classes), init_seed);
      } else {
        TrainConfig tc = cfg.train;
        tc.seed = derive_seed(cfg.seed, p.client_id, 0, Purpose::kLocalOnlyTrain);
        train_local_only(c, train, cfg.arch, tc, init_seed);
      }
    }
    c.check_invariants();
    clients.push_back(std::move(c));
  }
  return clients;
}

std::string params_fingerprint(const ModelParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the raw bit patterns
  params.for_each([&](double v, bool) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xFF;
      h *= 0x100000001b3ULL;
    }
  });
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RoundRecord run_fal_round(std::vector<ClientState>& clients, ModelParams& global, const FederationData& data,
                          const FederationConfig& cfg, std::size_t round) {
  if (!data.train || !data.test) throw ValidationError("run_fal_round: missing datasets");
  if (clients.empty()) throw ValidationError("run_fal_round: no clients");
  if (round < 1) throw ValidationError("run_fal_round: rounds are numbered from 1");
  const FeatureDataset& train = *data.train;
  for (const auto& c : clients) {
    if (c.unlabeled.size() < cfg.budget) {
      throw ValidationError("client " + std::to_string(c.client_id) + ": unlabeled pool exhausted (" +
                            std::to_string(c.unlabeled.size()) + " left, budget " + std::to_string(cfg.budget) + ")");
    }
  }

  const std::size_t n_clients = clients.size();
  RoundRecord rec;
  rec.round = round;
  rec.selections.resize(n_clients);
  rec.fallbacks.assign(n_clients, false);
  std::vector<char> fallback(n_clients, 0);

  parallel_for(n_clients, cfg.threads, [&](std::size_t k) {
    ClientState& client = clients[k];
    const std::size_t before = client.labeled.size();
    const auto& rows = client.partition.indices;
    const Matrix features = select_rows(train.features, rows);

    // Query space uses positions within the partition; rows are sorted, so
    // position order matches dataset-row order for tie-breaking.
    auto to_positions = [&](const std::vector<std::size_t>& ids) {
      std::vector<std::size_t> pos;
      pos.reserve(ids.size());
      for (auto id : ids) {
        pos.push_back(static_cast<std::size_t>(std::lower_bound(rows.begin(), rows.end(), id) - rows.begin()));
      }
      return pos;
    };
    const auto lab_pos = to_positions(client.labeled);
    const auto unl_pos = to_positions(client.unlabeled);

    QueryContext ctx;
    ctx.features = &features;
    if (k < data.client_features.size() && data.client_features[k]) ctx.selection_features = data.client_features[k];
    ctx.labeled = lab_pos;
    ctx.unlabeled = unl_pos;
    ctx.budget = cfg.budget;
    ctx.global_params = &global;
    ctx.local_only_params = client.local_only_params ? &*client.local_only_params : nullptr;
    ctx.selector = cfg.selector;
    ctx.geometry = cfg.geometry;
    ctx.logo = cfg.logo;
    ctx.seed = derive_seed(cfg.seed, client.client_id, round, Purpose::kQuery);

    const QueryResult q = run_query(cfg.strategy, ctx);
    std::vector<std::size_t> picked;
    for (auto p : q.selected) picked.push_back(rows[p]);
    fallback[k] = q.fallback ? 1 : 0;

    client = annotate(std::move(client), picked, cfg.budget);
    rec.selections[k] = std::move(picked);

    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, client.client_id, round, Purpose::kLocalTrain);
    const Matrix x = select_rows(train.features, client.labeled);
    client.local_params = sgd_train(global, x, labels_of(train, client.labeled), tc);

    if (cfg.wants_local_only()) {
      TrainConfig lo = cfg.train;
      lo.seed = derive_seed(cfg.seed, client.client_id, round, Purpose::kLocalOnlyTrain);
      train_local_only(client, train, cfg.arch, lo,
                       derive_seed(cfg.seed, client.client_id, round, Purpose::kLocalOnlyInit));
    }

    client.check_invariants();
    if (client.labeled.size() != before + cfg.budget) {
      throw RuntimeFailure("client " + std::to_string(client.client_id) + ": labeled set did not grow by the budget");
    }
  });

  std::vector<ModelParams> locals;
  std::vector<double> weights;
  for (const auto& c : clients) {
    locals.push_back(c.local_params);
    weights.push_back(static_cast<double>(cfg.weighting == AggregationWeight::kLabeled ? c.labeled.size()
                                                                                      : c.partition.indices.size()));
    rec.labeled_counts.push_back(c.labeled.size());
  }
  global = fedavg(locals, weights);
  for (std::size_t k = 0; k < n_clients; ++k) rec.fallbacks[k] = fallback[k] != 0;

  rec.global_params_id = params_fingerprint(global);
  const auto pred = predict(global, data.test->features);
  rec.accuracy = accuracy_of(pred, data.test->labels);
  rec.balanced_recall = balanced_recall_of(pred, data.test->labels);
  return rec;
}

}  // namespace fal
