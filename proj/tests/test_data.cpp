// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "fal/data.hpp"
#include "fal/error.hpp"

namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& content) {
  const auto dir = fs::temp_directory_path() / "fal_test_data";
  fs::create_directories(dir);
  const auto p = dir / name;
  std::ofstream(p, std::ios::binary) << content;
  return p;
}

fal::FeatureDataset balanced(std::size_t per_class, int classes) {
  fal::FeatureDataset ds;
  ds.num_classes = classes;
  ds.features = fal::Matrix(per_class * static_cast<std::size_t>(classes), 1);
  for (std::size_t i = 0; i < ds.features.rows; ++i) {
    ds.ids.push_back(static_cast<std::int64_t>(i));
    ds.labels.push_back(static_cast<int>(i % static_cast<std::size_t>(classes)));
    ds.features(i, 0) = static_cast<double>(i);
  }
  return ds;
}

}  // namespace

TEST_CASE("load_dataset parses the documented layout") {
  const auto p = temp_file("small.csv", "id,label,f0,f1,#classes=2\n0,0,1.5,2\n1,1,-3,4e-2\n2,0,0,0\n");
  const auto ds = fal::load_dataset(p);
  CHECK(ds.size() == 3);
  CHECK(ds.dim() == 2);
  CHECK(ds.num_classes == 2);
  CHECK(ds.labels == std::vector<int>{0, 1, 0});
  CHECK(ds.features(1, 1) == 0.04);

  const auto inferred = fal::load_dataset(temp_file("noc.csv", "id,label,f0\n0,0,1\n1,3,2\n"));
  CHECK(inferred.num_classes == 4);
}

TEST_CASE("load_dataset errors") {
  CHECK_THROWS_AS(fal::load_dataset("/nonexistent/file.csv"), fal::ValidationError);
  CHECK_THROWS_WITH_AS(fal::load_dataset(temp_file("range.csv", "id,label,f0,#classes=3\n0,5,1\n")),
                       doctest::Contains("label out of range"), fal::ValidationError);
  CHECK_THROWS_AS(fal::load_dataset(temp_file("nan.csv", "id,label,f0\n0,0,abc\n")), fal::ValidationError);
  CHECK_THROWS_AS(fal::load_dataset(temp_file("dup.csv", "id,label,f0\n0,0,1\n0,1,2\n")), fal::ValidationError);
  CHECK_THROWS_AS(fal::load_dataset(temp_file("ragged.csv", "id,label,f0,f1\n0,0,1\n")), fal::ValidationError);
  CHECK_THROWS_AS(fal::load_dataset(temp_file("inf.csv", "id,label,f0\n0,0,inf\n")), fal::ValidationError);
}

TEST_CASE("save/load round-trip is bit exact") {
  auto split = fal::synth_dataset(3, 5, 10, 0.73, 99);
  split.train.features(0, 0) = 0.1 + 0.2;
  split.train.features(1, 1) = 1e-300;
  const auto p = fs::temp_directory_path() / "fal_test_data" / "roundtrip.csv";
  fal::save_dataset(split.train, p);
  const auto back = fal::load_dataset(p);
  CHECK(back.features == split.train.features);
  CHECK(back.ids == split.train.ids);
  CHECK(back.labels == split.train.labels);
  CHECK(back.num_classes == split.train.num_classes);
}

TEST_CASE("synth_dataset") {
  const auto zero = fal::synth_dataset(2, 2, 10, 0.0, 7);
  for (int c = 0; c < 2; ++c) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < zero.train.size(); ++i) {
      if (zero.train.labels[i] == c) rows.push_back(i);
    }
    for (auto r : rows) CHECK(zero.train.features.row(r)[0] == zero.train.features.row(rows[0])[0]);
  }

  const auto big = fal::synth_dataset(10, 16, 100, 0.5, 1);
  CHECK(big.train.size() == 800);
  CHECK(big.test.size() == 200);
  for (auto n : big.train.class_counts()) CHECK(n == 80);
  for (auto n : big.test.class_counts()) CHECK(n == 20);

  const auto again = fal::synth_dataset(10, 16, 100, 0.5, 1);
  CHECK(again.train.features == big.train.features);
  CHECK(again.test.features == big.test.features);

  CHECK_THROWS_AS(fal::synth_dataset(2, 2, 1, 0.1, 0), fal::ValidationError);
  CHECK_THROWS_AS(fal::synth_dataset(1, 2, 10, 0.1, 0), fal::ValidationError);
}

TEST_CASE("uniform partition mirrors global proportions") {
  const auto ds = balanced(50, 2);
  const auto parts = fal::dirichlet_partition(ds, fal::PartitionSpec::parse_alpha("uniform", 2, 3));
  const auto table = fal::partition_class_counts(ds, parts);
  CHECK(table[0] == std::vector<std::size_t>{25, 25});
  CHECK(table[1] == std::vector<std::size_t>{25, 25});
}

TEST_CASE("partition conservation, quotas and determinism") {
  auto split = fal::synth_dataset(7, 2, 37, 1.0, 4);
  const auto& ds = split.train;
  for (const std::string alpha : {"0.05", "0.1", "1.0", "10", "uniform"}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      for (std::size_t k : {1, 3, 10}) {
        const auto spec = fal::PartitionSpec::parse_alpha(alpha, k, seed);
        const auto parts = fal::dirichlet_partition(ds, spec);
        REQUIRE(parts.size() == k);

        std::vector<std::size_t> all;
        for (std::size_t c = 0; c < k; ++c) {
          const std::size_t quota = ds.size() / k + (c < ds.size() % k ? 1 : 0);
          CHECK(parts[c].indices.size() == quota);
          CHECK(std::is_sorted(parts[c].indices.begin(), parts[c].indices.end()));
          all.insert(all.end(), parts[c].indices.begin(), parts[c].indices.end());
        }
        std::sort(all.begin(), all.end());
        std::vector<std::size_t> expect(ds.size());
        std::iota(expect.begin(), expect.end(), 0);
        CHECK(all == expect);

        const auto table = fal::partition_class_counts(ds, parts);
        const auto global = ds.class_counts();
        for (std::size_t c = 0; c < global.size(); ++c) {
          std::size_t sum = 0;
          for (const auto& row : table) sum += row[c];
          CHECK(sum == global[c]);
        }

        const auto again = fal::dirichlet_partition(ds, spec);
        for (std::size_t c = 0; c < k; ++c) CHECK(again[c].indices == parts[c].indices);
      }
    }
  }
}

TEST_CASE("partition errors") {
  const auto ds = balanced(2, 2);
  CHECK_THROWS_AS(fal::dirichlet_partition(ds, fal::PartitionSpec::parse_alpha("1.0", 5, 0)), fal::ValidationError);
  CHECK_THROWS_AS(fal::PartitionSpec::parse_alpha("-1", 2, 0), fal::ValidationError);
  CHECK_THROWS_AS(fal::PartitionSpec::parse_alpha("0", 2, 0), fal::ValidationError);
  CHECK_THROWS_AS(fal::PartitionSpec::parse_alpha("abc", 2, 0), fal::ValidationError);
}

TEST_CASE("smaller alpha gives more heterogeneous clients") {
  auto split = fal::synth_dataset(10, 2, 625, 1.0, 0);  // 500 train rows per class
  const auto& ds = split.train;
  REQUIRE(ds.size() == 5000);
  double share_01 = 0.0, share_1 = 0.0, share_u = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    share_01 += fal::mean_max_class_share(ds, fal::dirichlet_partition(ds, fal::PartitionSpec::parse_alpha("0.1", 10, seed)));
    share_1 += fal::mean_max_class_share(ds, fal::dirichlet_partition(ds, fal::PartitionSpec::parse_alpha("1.0", 10, seed)));
    share_u += fal::mean_max_class_share(ds, fal::dirichlet_partition(ds, fal::PartitionSpec::parse_alpha("uniform", 10, seed)));
  }
  CHECK(share_01 > share_1);
  CHECK(share_1 >= share_u);
}

TEST_CASE("partition file round-trip and validation") {
  const auto ds = balanced(10, 2);
  const auto parts = fal::dirichlet_partition(ds, fal::PartitionSpec::parse_alpha("0.5", 3, 1));
  const auto p = fs::temp_directory_path() / "fal_test_data" / "part.csv";
  fal::save_partition(parts, p);
  const auto back = fal::load_partition(p, ds.size());
  REQUIRE(back.size() == parts.size());
  for (std::size_t k = 0; k < parts.size(); ++k) CHECK(back[k].indices == parts[k].indices);

  CHECK_THROWS_AS(fal::load_partition(temp_file("short.csv", "client_id,row_index\n0,0\n"), 2), fal::ValidationError);
  CHECK_THROWS_AS(fal::load_partition(temp_file("twice.csv", "client_id,row_index\n0,0\n1,0\n0,1\n"), 2),
                  fal::ValidationError);
}
