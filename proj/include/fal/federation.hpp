// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fal/data.hpp"
#include "fal/model.hpp"
#include "fal/strategies.hpp"

namespace fal {

/// One client's view: its partition split into labeled and unlabeled dataset rows.
struct ClientState {
  std::size_t client_id = 0;
  ClientPartition partition;
  std::vector<std::size_t> labeled;    // sorted dataset rows
  std::vector<std::size_t> unlabeled;  // sorted dataset rows
  ModelParams local_params;
  std::optional<ModelParams> local_only_params;

  /// Throws RuntimeFailure unless labeled and unlabeled partition the client's rows.
  void check_invariants() const;
};

struct RoundRecord {
  std::size_t round = 0;
  std::vector<std::size_t> labeled_counts;  // per client
  std::string global_params_id;             // content hash of the aggregated parameters
  double accuracy = 0.0;
  double balanced_recall = 0.0;
  std::vector<std::vector<std::size_t>> selections;  // per client, dataset rows in pick order
  std::vector<bool> fallbacks;                       // per client, badge fell back to random
};

enum class AggregationWeight { kLabeled, kPartition };

struct FederationConfig {
  Arch arch;
  TrainConfig train;  // train.seed is ignored; per-client seeds derive from `seed`
  Strategy strategy = Strategy::kRandom;
  Selector selector = Selector::kGlobal;
  GeometryConfig geometry;
  LogoOptions logo;
  std::size_t budget = 1;
  AggregationWeight weighting = AggregationWeight::kLabeled;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  /// Local-only models are maintained when the strategy or selector reads them.
  bool wants_local_only() const { return needs_local_only(strategy) || selector == Selector::kLocalOnly; }
};

/// Read-only data shared by every client during a run.
struct FederationData {
  const FeatureDataset* train = nullptr;
  const FeatureDataset* test = nullptr;
  /// Optional per-client clustering features, one row per partition index (in
  /// partition order). Empty or null entries fall back to the shared features.
  std::vector<const Matrix*> client_features;
};

/// Moves `selected` (dataset rows) from unlabeled to labeled. `selected` must
/// hold exactly `budget` distinct rows of the unlabeled set.
ClientState annotate(ClientState client, std::span<const std::size_t> selected, std::size_t budget);

/// Entry-wise weighted mean; weights are normalised and summed in input order.
ModelParams fedavg(std::span<const ModelParams> params, std::span<const double> weights);

/// Fresh model trained only on the client's labeled rows; stored on the client.
ModelParams train_local_only(ClientState& client, const FeatureDataset& train, const Arch& arch,
                             const TrainConfig& cfg, std::uint64_t init_seed);

/// Clients with `initial_labeled` rows drawn at random from each partition.
std::vector<ClientState> make_clients(const std::vector<ClientPartition>& parts, const FeatureDataset& train,
                                      const FederationConfig& cfg, const ModelParams& global,
                                      std::size_t initial_labeled = 0);

ModelParams initial_global(const FeatureDataset& train, const FederationConfig& cfg);

/// One round: query, annotate, local training, optional local-only refresh,
/// aggregation, evaluation. Updates `clients` and `global` in place.
RoundRecord run_fal_round(std::vector<ClientState>& clients, ModelParams& global, const FederationData& data,
                          const FederationConfig& cfg, std::size_t round);

std::string params_fingerprint(const ModelParams& params);

}  // namespace fal
