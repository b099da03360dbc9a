// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fal/matrix.hpp"

namespace fal {

/// Labeled feature vectors that every client draws its rows from.
struct FeatureDataset {
  std::vector<std::int64_t> ids;
  Matrix features;  // N x d
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols; }

  /// Throws ValidationError on shape mismatch, non-finite entries,
  /// out-of-range labels or duplicate ids.
  void validate() const;

  std::vector<std::size_t> class_counts() const;
};

/// Class-proportion concentration. An empty alpha stands for alpha = infinity,
/// i.e. every client mirrors the global class proportions.
struct PartitionSpec {
  std::optional<double> alpha;
  std::size_t num_clients = 1;
  std::uint64_t seed = 0;

  bool uniform() const { return !alpha.has_value(); }
  static PartitionSpec parse_alpha(const std::string& text, std::size_t num_clients,
                                   std::uint64_t seed);
};

struct ClientPartition {
  std::size_t client_id = 0;
  std::vector<std::size_t> indices;  // sorted dataset rows
};

// CSV layout: header `id,label,f0,...,f{d-1},#classes=C`, one row per sample.
FeatureDataset load_dataset(const std::filesystem::path& path);
void save_dataset(const FeatureDataset& ds, const std::filesystem::path& path);

struct SynthSplit {
  FeatureDataset train;
  FeatureDataset test;
};

/// Gaussian mixture with one N(0, I) mean per class and isotropic spread
/// around it. Each class contributes per_class samples, split 80/20 into
/// train/test (train count = round(0.8 * per_class), at least one of each).
SynthSplit synth_dataset(int num_classes, std::size_t dim, std::size_t per_class, double spread,
                         std::uint64_t seed);

/// Non-IID split with equal quotas per client; see README for the allocation rule.
std::vector<ClientPartition> dirichlet_partition(const FeatureDataset& ds, const PartitionSpec& spec);

// CSV `client_id,row_index`.
void save_partition(const std::vector<ClientPartition>& parts, const std::filesystem::path& path);
std::vector<ClientPartition> load_partition(const std::filesystem::path& path, std::size_t num_rows);

/// rows x classes table of per-client class counts.
std::vector<std::vector<std::size_t>> partition_class_counts(
    const FeatureDataset& ds, const std::vector<ClientPartition>& parts);

/// Mean over clients of the largest class share within the client.
double mean_max_class_share(const FeatureDataset& ds, const std::vector<ClientPartition>& parts);

/// Subset of the dataset in the given row order.
FeatureDataset subset(const FeatureDataset& ds, const std::vector<std::size_t>& rows);

}  // namespace fal
