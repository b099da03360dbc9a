// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fal/matrix.hpp"

namespace fal {

enum class ArchKind { kLinear, kMlp };

struct Arch {
  ArchKind kind = ArchKind::kLinear;
  std::size_t hidden_units = 0;  // mlp only

  static Arch linear() { return {}; }
  static Arch mlp(std::size_t hidden) { return {ArchKind::kMlp, hidden}; }
  /// "linear" or "mlp:<hidden>".
  static Arch parse(const std::string& text);
  std::string name() const;

  friend bool operator==(const Arch&, const Arch&) = default;
};

struct Layer {
  Matrix weight;  // out x in
  std::vector<double> bias;

  friend bool operator==(const Layer&, const Layer&) = default;
};

/// Classifier head. Linear: one layer d -> C. Mlp: d -> hidden (ReLU) -> C.
struct ModelParams {
  Arch arch;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::vector<Layer> layers;

  /// Size of the representation feeding the final layer.
  std::size_t embedding_dim() const;
  std::size_t parameter_count() const;
  bool same_shape(const ModelParams& other) const;

  /// Visits every scalar parameter in a fixed order: layer by layer, weights then biases.
  template <typename F>
  void for_each(F&& f) {
    for (auto& l : layers) {
      for (double& w : l.weight.data) f(w, true);
      for (double& b : l.bias) f(b, false);
    }
  }
  template <typename F>
  void for_each(F&& f) const {
    for (const auto& l : layers) {
      for (double w : l.weight.data) f(w, true);
      for (double b : l.bias) f(b, false);
    }
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t local_epochs = 10;
  std::size_t batch_size = 0;  // 0: full batch up to 64 samples, else 64
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t effective_batch(std::size_t n) const;
};

ModelParams init_params(const Arch& arch, std::size_t input_dim, std::size_t num_classes,
                        std::uint64_t seed);

/// All-zero parameters with the given shape.
ModelParams zeros_like(const ModelParams& p);

Matrix logits(const ModelParams& params, const Matrix& features);
Matrix predict_proba(const ModelParams& params, const Matrix& features);
std::vector<int> predict(const ModelParams& params, const Matrix& features);

/// Mean cross-entropy plus (weight_decay / 2) * ||weights||^2; biases are not penalised.
double loss(const ModelParams& params, const Matrix& features, std::span<const int> labels,
            double weight_decay);

struct LossAndGradient {
  double loss = 0.0;
  ModelParams gradient;
};

LossAndGradient loss_and_gradient(const ModelParams& params, const Matrix& features,
                                  std::span<const int> labels, double weight_decay);

/// Mini-batch SGD with momentum over a seeded shuffle; the input is left untouched.
ModelParams sgd_train(const ModelParams& params, const Matrix& features, std::span<const int> labels,
                      const TrainConfig& cfg);

Matrix penultimate_embedding(const ModelParams& params, const Matrix& features);

/// Per sample (p - onehot(argmax p)) outer h, flattened class-major: C * d' columns.
Matrix gradient_embedding(const ModelParams& params, const Matrix& features);

// Text checkpoint; doubles are written in shortest round-trip form.
void save_params(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_params(const std::filesystem::path& path);

}  // namespace fal
