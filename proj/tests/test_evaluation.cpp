// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "fal/error.hpp"
#include "fal/evaluation.hpp"
#include "oracles.hpp"

namespace {

std::vector<fal::RunResult> runs(const std::string& name, const std::vector<std::vector<double>>& per_seed) {
  std::vector<fal::RunResult> out;
  for (std::size_t s = 0; s < per_seed.size(); ++s) out.push_back({name, s, fal::Metric::kAccuracy, per_seed[s]});
  return out;
}

// Straight from the definition, no shortcuts.
double t_oracle(const std::vector<double>& d) {
  const double n = static_cast<double>(d.size());
  double mean = 0.0;
  for (double v : d) mean += v / n;
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  return std::sqrt(n) * mean / std::sqrt(ss / (n - 1.0));
}

}  // namespace

TEST_CASE("accuracy and balanced recall") {
  const std::vector<int> truth{0, 1, 1, 2};
  CHECK(fal::accuracy_of(std::vector<int>{0, 1, 2, 2}, truth) == doctest::Approx(0.75));
  CHECK(fal::balanced_recall_of(std::vector<int>{0, 1, 2, 2}, truth) == doctest::Approx((1.0 + 0.5 + 1.0) / 3.0));

  std::vector<int> skewed(100, 0);
  for (std::size_t i = 90; i < 100; ++i) skewed[i] = 1;
  const std::vector<int> majority(100, 0);
  CHECK(fal::accuracy_of(majority, skewed) == doctest::Approx(0.9));
  CHECK(fal::balanced_recall_of(majority, skewed) == doctest::Approx(0.5));

  CHECK(fal::accuracy_of(truth, truth) == 1.0);
  CHECK(fal::balanced_recall_of(truth, truth) == 1.0);
  CHECK_THROWS_AS(fal::accuracy_of(std::vector<int>{0}, truth), fal::ValidationError);
  CHECK_THROWS_AS(fal::accuracy_of(std::vector<int>{}, std::vector<int>{}), fal::ValidationError);
}

TEST_CASE("metric names") {
  CHECK(fal::parse_metric("accuracy") == fal::Metric::kAccuracy);
  CHECK(fal::parse_metric("balanced_recall") == fal::Metric::kBalancedRecall);
  CHECK(fal::metric_name(fal::Metric::kBalancedRecall) == "balanced_recall");
  CHECK_THROWS_AS(fal::parse_metric("f1"), fal::ValidationError);
}

TEST_CASE("t-score fixtures") {
  const std::vector<double> zero(4, 0.0);
  CHECK(fal::t_score(std::vector<double>{1, 2, 3, 2}, zero) == doctest::Approx(4.899).epsilon(1e-3));
  CHECK(fal::t_score(std::vector<double>{1, -1, 1, -1}, zero) == 0.0);
  CHECK(fal::t_score(std::vector<double>{1, 1, 1, 1}, zero) == std::numeric_limits<double>::infinity());
  CHECK(fal::t_score(std::vector<double>{-1, -1, -1, -1}, zero) == -std::numeric_limits<double>::infinity());
  CHECK(fal::t_score(zero, zero) == 0.0);
  CHECK_THROWS_AS(fal::t_score(std::vector<double>{1}, std::vector<double>{0}), fal::ValidationError);
  CHECK_THROWS_AS(fal::t_score(std::vector<double>{1, 2}, std::vector<double>{0}), fal::ValidationError);
}

TEST_CASE("t-score properties") {
  std::mt19937_64 rng(11);
  const auto m = oracle::random_matrix(60, 8, rng);
  for (std::size_t r = 0; r + 1 < 60; r += 2) {
    const auto a = m.row(r);
    const auto b = m.row(r + 1);
    std::vector<double> d(8), a2(8), b2(8);
    for (std::size_t i = 0; i < 8; ++i) {
      d[i] = a[i] - b[i];
      a2[i] = a[i] + 3.5;
      b2[i] = b[i] + 3.5;
    }
    const double t = fal::t_score(a, b);
    CHECK(t == doctest::Approx(t_oracle(d)).epsilon(1e-12));
    CHECK(fal::t_score(b, a) == doctest::Approx(-t).epsilon(1e-12));
    CHECK(fal::t_score(a2, b2) == doctest::Approx(t).epsilon(1e-9));
  }
}

TEST_CASE("critical values") {
  CHECK(fal::t_critical_95(3) == doctest::Approx(3.182));
  CHECK(fal::t_critical_95(4) == doctest::Approx(2.776));
  CHECK(fal::t_critical_95(9) == doctest::Approx(2.262));
  CHECK_THROWS_AS(fal::t_critical_95(2), fal::ValidationError);
  CHECK_THROWS_AS(fal::t_critical_95(10), fal::ValidationError);
}

TEST_CASE("win rate") {
  const std::vector<std::vector<double>> base{{0.1, 0.2, 0.3}, {0.2, 0.1, 0.4}, {0.3, 0.3, 0.2}, {0.1, 0.4, 0.3}};
  const auto self = fal::win_rate(runs("a", base), runs("a", base));
  CHECK(self.win_rate == 0.0);
  CHECK(self.defeat_rate == 0.0);

  auto better = base;
  for (auto& s : better)
    for (auto& v : s) v += 0.1;
  // Break the constant difference so t stays finite.
  better[0][0] += 0.01;
  better[0][1] += 0.01;
  better[0][2] += 0.01;
  const auto dom = fal::win_rate(runs("b", better), runs("a", base));
  CHECK(dom.win_rate == 1.0);
  CHECK(dom.defeat_rate == 0.0);
  const auto rev = fal::win_rate(runs("a", base), runs("b", better));
  CHECK(rev.win_rate == 0.0);
  CHECK(rev.defeat_rate == 1.0);

  // Wins in 4 of 10 rounds.
  std::vector<std::vector<double>> i_side(4, std::vector<double>(10, 0.5));
  std::vector<std::vector<double>> j_side = i_side;
  const double lift[4] = {0.10, 0.11, 0.12, 0.10};
  for (std::size_t s = 0; s < 4; ++s)
    for (std::size_t r = 0; r < 4; ++r) i_side[s][r] += lift[s];
  for (std::size_t s = 0; s < 4; ++s) i_side[s][7] += (s % 2 ? 0.01 : -0.01);
  const auto partial = fal::win_rate(runs("i", i_side), runs("j", j_side));
  CHECK(partial.win_rate == doctest::Approx(0.4));
  CHECK(partial.defeat_rate == 0.0);
  CHECK(partial.t_scores.size() == 10);

  const auto strict = fal::win_rate(runs("i", i_side), runs("j", j_side), 1e9);
  CHECK(strict.win_rate == 0.0);

  auto short_j = runs("j", j_side);
  short_j.pop_back();
  CHECK_THROWS_AS(fal::win_rate(runs("i", i_side), short_j), fal::ValidationError);
  auto ragged = runs("j", j_side);
  ragged[0].series.pop_back();
  CHECK_THROWS_AS(fal::win_rate(runs("i", i_side), ragged), fal::ValidationError);
}

TEST_CASE("histogram") {
  const std::vector<double> v{0.0, 0.1, 0.5, 0.99, 1.0, 2.0, -1.0};
  const auto h = fal::make_histogram(v, 0.0, 1.0, 4);
  REQUIRE(h.edges.size() == 5);
  CHECK(h.edges.front() == 0.0);
  CHECK(h.edges.back() == 1.0);
  CHECK(std::accumulate(h.counts.begin(), h.counts.end(), std::size_t{0}) == v.size());
  CHECK(h.counts[0] == 3);
  CHECK(h.counts[1] == 0);
  CHECK(h.counts[2] == 1);
  CHECK(h.counts[3] == 3);
}

TEST_CASE("shift report") {
  const auto ds = fal::synth_dataset(4, 3, 60, 1.0, 9).train;
  const std::vector<fal::ClientPartition> whole{{0, [&] {
                                                   std::vector<std::size_t> all(ds.labels.size());
                                                   std::iota(all.begin(), all.end(), std::size_t{0});
                                                   return all;
                                                 }()}};
  const auto one = fal::typicality_shift_report(ds, whole, 10, 0.5);
  CHECK(one.centralized == one.per_client);
  CHECK(one.retention == 1.0);
  const auto ref = oracle::typicality(ds.features, 10);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(one.centralized[i] == doctest::Approx(ref[i]).epsilon(1e-12));

  const auto parts = fal::dirichlet_partition(ds, fal::PartitionSpec::parse_alpha("uniform", 6, 2));
  const auto split = fal::typicality_shift_report(ds, parts, 10);
  CHECK(split.per_client_mean < split.centralized_mean);
  CHECK(split.centralized_hist.counts.size() == fal::kShiftBins);
  for (const auto* h : {&split.centralized_hist, &split.per_client_hist})
    CHECK(std::accumulate(h->counts.begin(), h->counts.end(), std::size_t{0}) == ds.labels.size());
  CHECK(split.retained <= split.above_threshold);

  const auto none = fal::typicality_shift_report(ds, parts, 10, 1e9);
  CHECK(none.above_threshold == 0);
  CHECK(std::isnan(none.retention));

  std::vector<fal::ClientPartition> tiny = parts;
  tiny[0].indices.resize(1);
  CHECK_THROWS_AS(fal::typicality_shift_report(ds, tiny, 10), fal::ValidationError);
}
