// SPDX-License-Identifier: Apache-2.0

#include "fal/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fal/error.hpp"
#include "fal/rng.hpp"

namespace fal {

namespace {

constexpr double kProbabilityFloor = 1e-12;
// Squared gradient-embedding norm below which BADGE treats a sample as fully confident.
constexpr double kBadgeZeroNorm = 1e-24;

struct StrategyEntry {
  Strategy id;
  const char* name;
};

constexpr StrategyEntry kStrategies[] = {
    {Strategy::kRandom, "random"}, {Strategy::kEntropy, "entropy"}, {Strategy::kMargin, "margin"},
    {Strategy::kCoreset, "coreset"}, {Strategy::kBadge, "badge"},   {Strategy::kKafal, "kafal"},
    {Strategy::kLogo, "logo"},       {Strategy::kTypiclust, "typiclust"},
};

std::vector<double> column_scores(const Matrix& proba, Uncertainty u) {
  return u == Uncertainty::kMargin ? margin_scores(proba) : entropy_scores(proba);
}

Matrix unlabeled_rows(const Matrix& m, const QueryContext& ctx) { return select_rows(m, ctx.unlabeled); }

}  // namespace

Strategy parse_strategy(const std::string& name) {
  for (const auto& e : kStrategies) {
    if (name == e.name) return e.id;
  }
  throw ValidationError("unknown strategy '" + name + "'");
}

std::string strategy_name(Strategy s) {
  for (const auto& e : kStrategies) {
    if (e.id == s) return e.name;
  }
  return "unknown";
}

const std::vector<Strategy>& all_strategies() {
  static const std::vector<Strategy> all = [] {
    std::vector<Strategy> v;
    for (const auto& e : kStrategies) v.push_back(e.id);
    return v;
  }();
  return all;
}

bool needs_local_only(Strategy s) { return s == Strategy::kKafal || s == Strategy::kLogo; }

Selector parse_selector(const std::string& name) {
  if (name == "global") return Selector::kGlobal;
  if (name == "local_only") return Selector::kLocalOnly;
  throw ValidationError("unknown selector '" + name + "' (expected global or local_only)");
}

std::string selector_name(Selector s) { return s == Selector::kGlobal ? "global" : "local_only"; }

const ModelParams& QueryContext::selector_model() const {
  if (selector == Selector::kLocalOnly) {
    if (!local_only_params) throw ValidationError("query: local-only model requested but not available");
    return *local_only_params;
  }
  if (!global_params) throw ValidationError("query: global model not available");
  return *global_params;
}

void QueryContext::validate() const {
  if (!features) throw ValidationError("query: missing features");
  if (selection_features && selection_features->rows != features->rows) {
    throw ValidationError("query: selection features must have one row per client sample");
  }
  if (budget > unlabeled.size()) throw ValidationError("query: budget exceeds unlabeled pool");
  if (selector == Selector::kLocalOnly && !local_only_params) {
    throw ValidationError("query: local_only selector requires a local-only model");
  }
  for (auto i : unlabeled) {
    if (i >= features->rows) throw ValidationError("query: unlabeled index out of range");
  }
  for (auto i : labeled) {
    if (i >= features->rows) throw ValidationError("query: labeled index out of range");
  }
}

std::vector<double> entropy_scores(const Matrix& proba) {
  std::vector<double> out(proba.rows);
  for (std::size_t i = 0; i < proba.rows; ++i) {
    double h = 0.0;
    for (double p : proba.row(i)) {
      if (p > 0.0) h -= p * std::log(p);
    }
    out[i] = h;
  }
  return out;
}

std::vector<double> margin_scores(const Matrix& proba) {
  std::vector<double> out(proba.rows);
  for (std::size_t i = 0; i < proba.rows; ++i) {
    double first = -1.0;
    double second = 0.0;
    for (double p : proba.row(i)) {
      if (p > first) {
        second = std::max(second, first);
        first = p;
      } else if (p > second) {
        second = p;
      }
    }
    out[i] = -(first - std::max(second, 0.0));
  }
  return out;
}

std::vector<double> disagreement_scores(const Matrix& proba_a, const Matrix& proba_b) {
  if (proba_a.rows != proba_b.rows || proba_a.cols != proba_b.cols) {
    throw ValidationError("disagreement: probability shapes differ");
  }
  std::vector<double> out(proba_a.rows);
  for (std::size_t i = 0; i < proba_a.rows; ++i) {
    const auto a = proba_a.row(i);
    const auto b = proba_b.row(i);
    double s = 0.0;
    for (std::size_t c = 0; c < a.size(); ++c) {
      const double pa = std::max(a[c], kProbabilityFloor);
      const double pb = std::max(b[c], kProbabilityFloor);
      s += (pa - pb) * (std::log(pa) - std::log(pb));
    }
    out[i] = s;
  }
  return out;
}

std::vector<std::size_t> top_by_score(std::span<const std::size_t> candidates,
                                      std::span<const double> scores, std::size_t count) {
  if (scores.size() != candidates.size()) throw ValidationError("top_by_score: size mismatch");
  count = std::min(count, candidates.size());
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return candidates[a] < candidates[b];
                    });
  std::vector<std::size_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = candidates[order[i]];
  return out;
}

QueryResult random_query(const QueryContext& ctx) {
  ctx.validate();
  Rng rng = make_rng(ctx.seed);
  std::vector<std::size_t> pool(ctx.unlabeled.begin(), ctx.unlabeled.end());
  for (std::size_t i = 0; i < ctx.budget; ++i) {
    std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
  }
  pool.resize(ctx.budget);
  return {pool, false};
}

QueryResult entropy_query(const QueryContext& ctx) {
  ctx.validate();
  const auto scores = entropy_scores(predict_proba(ctx.selector_model(), unlabeled_rows(*ctx.features, ctx)));
  return {top_by_score(ctx.unlabeled, scores, ctx.budget), false};
}

QueryResult margin_query(const QueryContext& ctx) {
  ctx.validate();
  const auto scores = margin_scores(predict_proba(ctx.selector_model(), unlabeled_rows(*ctx.features, ctx)));
  return {top_by_score(ctx.unlabeled, scores, ctx.budget), false};
}

QueryResult coreset_query(const QueryContext& ctx) {
  ctx.validate();
  QueryResult out;
  if (ctx.budget == 0) return out;
  const Matrix emb = penultimate_embedding(ctx.selector_model(), *ctx.features);
  const auto& u = ctx.unlabeled;
  const std::size_t m = u.size();

  // Squared distance from each unlabeled point to its nearest labeled/selected point.
  std::vector<double> nearest(m, std::numeric_limits<double>::infinity());
  std::vector<bool> taken(m, false);
  auto absorb = [&](std::span<const double> center) {
    for (std::size_t i = 0; i < m; ++i) {
      nearest[i] = std::min(nearest[i], sq_distance(emb.row(u[i]), center));
    }
  };
  auto pick = [&](std::size_t i) {
    taken[i] = true;
    out.selected.push_back(u[i]);
    absorb(emb.row(u[i]));
  };

  for (auto l : ctx.labeled) absorb(emb.row(l));
  if (ctx.labeled.empty()) {
    // Seed with the lower member of the farthest unlabeled pair; among equally
    // far pairs the lexicographically smallest (lower, upper) index pair wins.
    auto ordered = [&](std::size_t a, std::size_t b) {
      return std::pair{std::min(u[a], u[b]), std::max(u[a], u[b])};
    };
    std::size_t best_a = 0;
    std::size_t best_b = 0;
    double best = -1.0;
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t b = a + 1; b < m; ++b) {
        const double d = sq_distance(emb.row(u[a]), emb.row(u[b]));
        if (d > best || (d == best && ordered(a, b) < ordered(best_a, best_b))) {
          best = d;
          best_a = a;
          best_b = b;
        }
      }
    }
    pick(u[best_a] <= u[best_b] ? best_a : best_b);
  }
  while (out.selected.size() < ctx.budget) {
    std::size_t arg = m;
    for (std::size_t i = 0; i < m; ++i) {
      if (taken[i]) continue;
      if (arg == m || nearest[i] > nearest[arg] || (nearest[i] == nearest[arg] && u[i] < u[arg])) arg = i;
    }
    pick(arg);
  }
  return out;
}

QueryResult badge_query(const QueryContext& ctx) {
  ctx.validate();
  QueryResult out;
  if (ctx.budget == 0) return out;
  const Matrix g = gradient_embedding(ctx.selector_model(), unlabeled_rows(*ctx.features, ctx));
  const std::size_t m = g.rows;

  std::vector<double> weight(m);
  double max_norm = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (double v : g.row(i)) s += v * v;
    weight[i] = s;
    max_norm = std::max(max_norm, s);
  }
  if (max_norm < kBadgeZeroNorm) {
    out = random_query(ctx);
    out.fallback = true;
    return out;
  }

  Rng rng = make_rng(ctx.seed);
  std::vector<bool> taken(m, false);
  std::vector<std::size_t> picks;
  while (picks.size() < ctx.budget) {
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (!taken[i]) total += weight[i];
    }
    std::size_t chosen = m;
    if (total > 0.0) {
      const double r = uniform_unit(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        if (taken[i] || weight[i] <= 0.0) continue;
        acc += weight[i];
        chosen = i;
        if (r < acc) break;
      }
    } else {
      // Remaining points coincide with chosen centers: draw uniformly among them.
      std::vector<std::size_t> rest;
      for (std::size_t i = 0; i < m; ++i) {
        if (!taken[i]) rest.push_back(i);
      }
      chosen = rest[uniform_index(rng, rest.size())];
    }
    taken[chosen] = true;
    picks.push_back(chosen);
    // After the first center, weights become squared distance to the nearest center.
    const auto c = g.row(chosen);
    for (std::size_t i = 0; i < m; ++i) {
      const double d = sq_distance(g.row(i), c);
      weight[i] = picks.size() == 1 ? d : std::min(weight[i], d);
    }
  }
  for (auto p : picks) out.selected.push_back(ctx.unlabeled[p]);
  return out;
}

QueryResult kafal_query(const QueryContext& ctx) {
  ctx.validate();
  if (!ctx.local_only_params || !ctx.global_params) {
    throw ValidationError("kafal: needs both global and local-only models");
  }
  const Matrix x = unlabeled_rows(*ctx.features, ctx);
  const auto scores = disagreement_scores(predict_proba(*ctx.global_params, x),
                                          predict_proba(*ctx.local_only_params, x));
  return {top_by_score(ctx.unlabeled, scores, ctx.budget), false};
}

QueryResult logo_query(const QueryContext& ctx) {
  ctx.validate();
  if (!ctx.local_only_params) throw ValidationError("logo: needs a local-only model");
  QueryResult out;
  if (ctx.budget == 0) return out;

  const Matrix x = unlabeled_rows(*ctx.features, ctx);
  const Matrix g = gradient_embedding(*ctx.local_only_params, x);
  const Clustering cl = kmeans(g, ctx.budget, ctx.seed, ctx.geometry.kmeans);

  const ModelParams& micro_model =
      ctx.logo.model == Selector::kLocalOnly ? *ctx.local_only_params : *ctx.global_params;
  if (ctx.logo.model == Selector::kGlobal && !ctx.global_params) {
    throw ValidationError("logo: global model not available");
  }
  const auto scores = column_scores(predict_proba(micro_model, x), ctx.logo.measure);

  std::vector<bool> taken(x.rows, false);
  std::size_t missing = 0;
  for (const auto& members : cl.members()) {
    if (members.empty()) {
      ++missing;
      continue;
    }
    std::size_t best = members.front();
    for (auto i : members) {
      if (scores[i] > scores[best]) best = i;  // members ascend, so ties keep the lower
    }
    taken[best] = true;
    out.selected.push_back(ctx.unlabeled[best]);
  }
  if (missing > 0) {
    std::vector<std::size_t> rest;
    std::vector<double> rest_scores;
    for (std::size_t i = 0; i < x.rows; ++i) {
      if (taken[i]) continue;
      rest.push_back(ctx.unlabeled[i]);
      rest_scores.push_back(scores[i]);
    }
    for (auto idx : top_by_score(rest, rest_scores, missing)) out.selected.push_back(idx);
  }
  return out;
}

QueryResult typiclust_query(const QueryContext& ctx) {
  ctx.validate();
  QueryResult out;
  if (ctx.budget == 0) return out;

  const Matrix& space = ctx.clustering_space();
  const std::size_t n = space.rows;
  const std::size_t k = ctx.labeled.size() + ctx.budget;
  if (k > n) throw ValidationError("typiclust: more clusters than client samples");
  const Clustering cl = kmeans(space, k, ctx.seed, ctx.geometry.kmeans);
  auto members = cl.members();

  std::vector<bool> is_labeled(n, false);
  for (auto l : ctx.labeled) is_labeled[l] = true;

  struct Group {
    std::size_t cluster;
    std::size_t size;
    std::size_t first;
    bool covered;
  };
  std::vector<Group> groups;
  for (std::size_t c = 0; c < k; ++c) {
    if (members[c].empty()) continue;
    const bool covered = std::any_of(members[c].begin(), members[c].end(),
                                     [&](std::size_t i) { return is_labeled[i]; });
    groups.push_back({c, members[c].size(), members[c].front(), covered});
  }
  std::sort(groups.begin(), groups.end(), [](const Group& a, const Group& b) {
    return a.size != b.size ? a.size > b.size : a.first < b.first;
  });

  // Typicality within each cluster, computed lazily.
  std::vector<std::vector<double>> typ(k);
  auto typicality_of = [&](std::size_t c) -> const std::vector<double>& {
    if (typ[c].empty()) {
      if (members[c].size() == 1) {
        typ[c] = {1.0};
      } else {
        const Matrix pts = select_rows(space, members[c]);
        typ[c] = typicality(pts, capped_neighbours(ctx.geometry.typicality_k, pts.rows));
      }
    }
    return typ[c];
  };

  std::vector<bool> taken(n, false);
  // Most typical unlabeled, untaken member of cluster c, or n when none is left.
  auto best_in = [&](std::size_t c) {
    const auto& t = typicality_of(c);
    std::size_t best = n;
    double best_t = -1.0;
    for (std::size_t m = 0; m < members[c].size(); ++m) {
      const auto i = members[c][m];
      if (is_labeled[i] || taken[i]) continue;
      if (t[m] > best_t) {
        best_t = t[m];
        best = i;
      }
    }
    return best;
  };
  auto take = [&](std::size_t i) {
    taken[i] = true;
    out.selected.push_back(i);
  };

  for (const auto& grp : groups) {
    if (out.selected.size() == ctx.budget) break;
    if (grp.covered) continue;
    if (auto i = best_in(grp.cluster); i != n) take(i);
  }

  // Shortfall: round-robin over covered clusters by size, then over every cluster.
  for (const bool covered_only : {true, false}) {
    bool progress = true;
    while (out.selected.size() < ctx.budget && progress) {
      progress = false;
      for (const auto& grp : groups) {
        if (out.selected.size() == ctx.budget) break;
        if (covered_only && !grp.covered) continue;
        if (auto i = best_in(grp.cluster); i != n) {
          take(i);
          progress = true;
        }
      }
    }
  }
  if (out.selected.size() != ctx.budget) throw RuntimeFailure("typiclust: could not fill the budget");
  return out;
}

QueryResult run_query(Strategy s, const QueryContext& ctx) {
  switch (s) {
    case Strategy::kRandom: return random_query(ctx);
    case Strategy::kEntropy: return entropy_query(ctx);
    case Strategy::kMargin: return margin_query(ctx);
    case Strategy::kCoreset: return coreset_query(ctx);
    case Strategy::kBadge: return badge_query(ctx);
    case Strategy::kKafal: return kafal_query(ctx);
    case Strategy::kLogo: return logo_query(ctx);
    case Strategy::kTypiclust: return typiclust_query(ctx);
  }
  throw ValidationError("unknown strategy");
}

}  // namespace fal
