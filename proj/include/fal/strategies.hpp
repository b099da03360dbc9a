// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fal/geometry.hpp"
#include "fal/matrix.hpp"
#include "fal/model.hpp"

namespace fal {

enum class Strategy { kRandom, kEntropy, kMargin, kCoreset, kBadge, kKafal, kLogo, kTypiclust };

Strategy parse_strategy(const std::string& name);
std::string strategy_name(Strategy s);
const std::vector<Strategy>& all_strategies();
/// True when the strategy reads a local-only model.
bool needs_local_only(Strategy s);

/// Which model drives model-based scoring.
enum class Selector { kGlobal, kLocalOnly };
Selector parse_selector(const std::string& name);
std::string selector_name(Selector s);

enum class Uncertainty { kMargin, kEntropy };

struct GeometryConfig {
  std::size_t typicality_k = 20;
  KMeansOptions kmeans;
};

/// Micro-step scoring used by LoGo.
struct LogoOptions {
  Selector model = Selector::kGlobal;
  Uncertainty measure = Uncertainty::kMargin;
};

/// Everything a strategy may consult when choosing `budget` points. Indices in
/// `labeled` / `unlabeled` are positions into the client's feature rows; ties
/// are always broken towards the lower position.
struct QueryContext {
  const Matrix* features = nullptr;            // model inputs, one row per client sample
  const Matrix* selection_features = nullptr;  // feature space for clustering; defaults to features
  std::span<const std::size_t> labeled;
  std::span<const std::size_t> unlabeled;
  std::size_t budget = 0;
  const ModelParams* global_params = nullptr;
  const ModelParams* local_only_params = nullptr;
  Selector selector = Selector::kGlobal;
  GeometryConfig geometry;
  LogoOptions logo;
  std::uint64_t seed = 0;

  const Matrix& clustering_space() const { return selection_features ? *selection_features : *features; }
  /// Model chosen by `selector`; throws when a local-only model is requested but absent.
  const ModelParams& selector_model() const;
  void validate() const;
};

struct QueryResult {
  std::vector<std::size_t> selected;  // in pick order
  bool fallback = false;              // badge fell back to random sampling
};

QueryResult random_query(const QueryContext& ctx);
QueryResult entropy_query(const QueryContext& ctx);
QueryResult margin_query(const QueryContext& ctx);
QueryResult coreset_query(const QueryContext& ctx);
QueryResult badge_query(const QueryContext& ctx);
QueryResult kafal_query(const QueryContext& ctx);
QueryResult logo_query(const QueryContext& ctx);
QueryResult typiclust_query(const QueryContext& ctx);

QueryResult run_query(Strategy s, const QueryContext& ctx);

// Per-row acquisition scores; larger means more preferred.
std::vector<double> entropy_scores(const Matrix& proba);
std::vector<double> margin_scores(const Matrix& proba);
std::vector<double> disagreement_scores(const Matrix& proba_a, const Matrix& proba_b);

/// The `count` candidates with the highest scores (scores[i] belongs to
/// candidates[i]), ties to the lower candidate.
std::vector<std::size_t> top_by_score(std::span<const std::size_t> candidates,
                                      std::span<const double> scores, std::size_t count);

}  // namespace fal
