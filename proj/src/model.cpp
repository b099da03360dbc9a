// SPDX-License-Identifier: Apache-2.0

#include "fal/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fal/csv.hpp"
#include "fal/error.hpp"
#include "fal/rng.hpp"

namespace fal {

Arch Arch::parse(const std::string& text) {
  if (text == "linear") return linear();
  if (text.starts_with("mlp:")) {
    std::size_t hidden = 0;
    const auto* b = text.data() + 4;
    const auto* e = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(b, e, hidden);
    if (ec == std::errc() && ptr == e && hidden > 0) return mlp(hidden);
  }
  throw ValidationError("unknown architecture '" + text + "' (expected linear or mlp:<hidden>)");
}

std::string Arch::name() const {
  return kind == ArchKind::kLinear ? "linear" : "mlp:" + std::to_string(hidden_units);
}

std::size_t ModelParams::embedding_dim() const {
  return arch.kind == ArchKind::kLinear ? input_dim : arch.hidden_units;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.data.size() + l.bias.size();
  return n;
}

bool ModelParams::same_shape(const ModelParams& other) const {
  if (arch != other.arch || input_dim != other.input_dim || num_classes != other.num_classes ||
      layers.size() != other.layers.size()) {
    return false;
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].weight.rows != other.layers[i].weight.rows ||
        layers[i].weight.cols != other.layers[i].weight.cols ||
        layers[i].bias.size() != other.layers[i].bias.size()) {
      return false;
    }
  }
  return true;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be non-negative");
  if (local_epochs < 1) throw ValidationError("local_epochs must be at least 1");
}

std::size_t TrainConfig::effective_batch(std::size_t n) const {
  if (batch_size > 0) return std::min(batch_size, n);
  return n <= 64 ? n : 64;
}

ModelParams init_params(const Arch& arch, std::size_t input_dim, std::size_t num_classes,
                        std::uint64_t seed) {
  if (input_dim < 1 || num_classes < 1) throw ValidationError("init_params: dimensions must be positive");
  if (arch.kind == ArchKind::kMlp && arch.hidden_units < 1) {
    throw ValidationError("init_params: mlp needs hidden units");
  }
  ModelParams p;
  p.arch = arch;
  p.input_dim = input_dim;
  p.num_classes = num_classes;

  Rng rng = make_rng(seed);
  auto make_layer = [&](std::size_t out, std::size_t in) {
    Layer l{Matrix(out, in), std::vector<double>(out, 0.0)};
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& w : l.weight.data) w = (2.0 * uniform_unit(rng) - 1.0) * bound;
    return l;
  };
  if (arch.kind == ArchKind::kLinear) {
    p.layers.push_back(make_layer(num_classes, input_dim));
  } else {
    p.layers.push_back(make_layer(arch.hidden_units, input_dim));
    p.layers.push_back(make_layer(num_classes, arch.hidden_units));
  }
  return p;
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  z.for_each([](double& v, bool) { v = 0.0; });
  return z;
}

namespace {

void check_input(const ModelParams& params, const Matrix& features) {
  if (features.cols != params.input_dim) {
    throw ValidationError("feature dimension " + std::to_string(features.cols) +
                          " does not match model input " + std::to_string(params.input_dim));
  }
}

// out = act(in * W^T + b)
Matrix affine(const Layer& layer, const Matrix& in, bool relu) {
  Matrix out(in.rows, layer.weight.rows);
  for (std::size_t i = 0; i < in.rows; ++i) {
    const auto x = in.row(i);
    for (std::size_t o = 0; o < layer.weight.rows; ++o) {
      const auto w = layer.weight.row(o);
      double z = layer.bias[o];
      for (std::size_t k = 0; k < x.size(); ++k) z += w[k] * x[k];
      out(i, o) = relu ? std::max(0.0, z) : z;
    }
  }
  return out;
}

void softmax_rows(Matrix& m) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    auto r = m.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double sum = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : r) v /= sum;
  }
}

double weight_norm_sq(const ModelParams& p) {
  double acc = 0.0;
  p.for_each([&](double v, bool is_weight) {
    if (is_weight) acc += v * v;
  });
  return acc;
}

void check_labels(const ModelParams& params, const Matrix& features, std::span<const int> labels) {
  check_input(params, features);
  if (labels.empty()) throw ValidationError("empty batch");
  if (labels.size() != features.rows) throw ValidationError("label count does not match feature rows");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= params.num_classes) {
      throw ValidationError("label out of range");
    }
  }
}

}  // namespace

Matrix penultimate_embedding(const ModelParams& params, const Matrix& features) {
  check_input(params, features);
  if (params.arch.kind == ArchKind::kLinear) return features;
  return affine(params.layers[0], features, true);
}

Matrix logits(const ModelParams& params, const Matrix& features) {
  const Matrix h = penultimate_embedding(params, features);
  return affine(params.layers.back(), h, false);
}

Matrix predict_proba(const ModelParams& params, const Matrix& features) {
  Matrix z = logits(params, features);
  softmax_rows(z);
  return z;
}

std::vector<int> predict(const ModelParams& params, const Matrix& features) {
  const Matrix z = logits(params, features);
  std::vector<int> out(z.rows);
  for (std::size_t i = 0; i < z.rows; ++i) {
    const auto r = z.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

double loss(const ModelParams& params, const Matrix& features, std::span<const int> labels,
            double weight_decay) {
  check_labels(params, features, labels);
  const Matrix z = logits(params, features);
  double acc = 0.0;
  for (std::size_t i = 0; i < z.rows; ++i) {
    const auto r = z.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double sum = 0.0;
    for (double v : r) sum += std::exp(v - mx);
    acc += std::log(sum) + mx - r[static_cast<std::size_t>(labels[i])];
  }
  return acc / static_cast<double>(z.rows) + 0.5 * weight_decay * weight_norm_sq(params);
}

LossAndGradient loss_and_gradient(const ModelParams& params, const Matrix& features,
                                  std::span<const int> labels, double weight_decay) {
  check_labels(params, features, labels);
  const std::size_t n = features.rows;
  const double inv_n = 1.0 / static_cast<double>(n);

  const Matrix h = penultimate_embedding(params, features);
  Matrix p = affine(params.layers.back(), h, false);

  LossAndGradient out;
  out.gradient = zeros_like(params);
  double ce = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto r = p.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double sum = 0.0;
    for (double v : r) sum += std::exp(v - mx);
    const auto y = static_cast<std::size_t>(labels[i]);
    ce += std::log(sum) + mx - r[y];
    for (double& v : r) v = std::exp(v - mx) / sum;
    r[y] -= 1.0;
    for (double& v : r) v *= inv_n;  // dL/dlogits
  }
  out.loss = ce * inv_n + 0.5 * weight_decay * weight_norm_sq(params);

  Layer& g_out = out.gradient.layers.back();
  const std::size_t c = params.num_classes;
  const std::size_t e = h.cols;
  for (std::size_t i = 0; i < n; ++i) {
    const auto dz = p.row(i);
    const auto hi = h.row(i);
    for (std::size_t o = 0; o < c; ++o) {
      g_out.bias[o] += dz[o];
      auto gw = g_out.weight.row(o);
      for (std::size_t k = 0; k < e; ++k) gw[k] += dz[o] * hi[k];
    }
  }

  if (params.arch.kind == ArchKind::kMlp) {
    const Layer& w_out = params.layers.back();
    Layer& g_hidden = out.gradient.layers.front();
    std::vector<double> dh(e);
    for (std::size_t i = 0; i < n; ++i) {
      const auto dz = p.row(i);
      const auto hi = h.row(i);
      std::fill(dh.begin(), dh.end(), 0.0);
      for (std::size_t o = 0; o < c; ++o) {
        const auto w = w_out.weight.row(o);
        for (std::size_t k = 0; k < e; ++k) dh[k] += dz[o] * w[k];
      }
      const auto x = features.row(i);
      for (std::size_t k = 0; k < e; ++k) {
        if (hi[k] <= 0.0) continue;
        g_hidden.bias[k] += dh[k];
        auto gw = g_hidden.weight.row(k);
        for (std::size_t j = 0; j < x.size(); ++j) gw[j] += dh[k] * x[j];
      }
    }
  }

  if (weight_decay > 0.0) {
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
      const auto& w = params.layers[li].weight.data;
      auto& g = out.gradient.layers[li].weight.data;
      for (std::size_t k = 0; k < w.size(); ++k) g[k] += weight_decay * w[k];
    }
  }
  return out;
}

ModelParams sgd_train(const ModelParams& params, const Matrix& features, std::span<const int> labels,
                      const TrainConfig& cfg) {
  cfg.validate();
  check_labels(params, features, labels);

  const std::size_t n = features.rows;
  const std::size_t batch = cfg.effective_batch(n);
  ModelParams w = params;
  ModelParams velocity = zeros_like(params);
  Rng rng = make_rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  std::vector<int> batch_labels;
  std::vector<std::size_t> batch_rows;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch);
      batch_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                        order.begin() + static_cast<std::ptrdiff_t>(stop));
      batch_labels.clear();
      for (auto r : batch_rows) batch_labels.push_back(labels[r]);
      const Matrix xb = select_rows(features, batch_rows);
      const auto lg = loss_and_gradient(w, xb, batch_labels, cfg.weight_decay);

      for (std::size_t li = 0; li < w.layers.size(); ++li) {
        auto step = [&](std::vector<double>& param, std::vector<double>& vel, const std::vector<double>& grad) {
          for (std::size_t k = 0; k < param.size(); ++k) {
            vel[k] = cfg.momentum * vel[k] + grad[k];
            param[k] -= cfg.learning_rate * vel[k];
          }
        };
        step(w.layers[li].weight.data, velocity.layers[li].weight.data, lg.gradient.layers[li].weight.data);
        step(w.layers[li].bias, velocity.layers[li].bias, lg.gradient.layers[li].bias);
      }
    }
  }
  return w;
}

Matrix gradient_embedding(const ModelParams& params, const Matrix& features) {
  const Matrix h = penultimate_embedding(params, features);
  Matrix p = affine(params.layers.back(), h, false);
  softmax_rows(p);
  const std::size_t c = params.num_classes;
  const std::size_t e = h.cols;
  Matrix out(features.rows, c * e);
  for (std::size_t i = 0; i < features.rows; ++i) {
    const auto pr = p.row(i);
    const auto top = static_cast<std::size_t>(std::max_element(pr.begin(), pr.end()) - pr.begin());
    const auto hi = h.row(i);
    auto dst = out.row(i);
    for (std::size_t o = 0; o < c; ++o) {
      const double g = pr[o] - (o == top ? 1.0 : 0.0);
      for (std::size_t k = 0; k < e; ++k) dst[o * e + k] = g * hi[k];
    }
  }
  return out;
}

namespace {

constexpr const char* kCheckpointMagic = "fal-params v1";

}  // namespace

void save_params(const ModelParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << kCheckpointMagic << '\n'
      << "arch " << params.arch.name() << '\n'
      << "input_dim " << params.input_dim << '\n'
      << "num_classes " << params.num_classes << '\n'
      << "layers " << params.layers.size() << '\n';
  for (const auto& l : params.layers) {
    out << "weight " << l.weight.rows << ' ' << l.weight.cols << '\n';
    for (std::size_t r = 0; r < l.weight.rows; ++r) {
      for (std::size_t c = 0; c < l.weight.cols; ++c) out << (c ? " " : "") << format_double(l.weight(r, c));
      out << '\n';
    }
    out << "bias " << l.bias.size() << '\n';
    for (std::size_t k = 0; k < l.bias.size(); ++k) out << (k ? " " : "") << format_double(l.bias[k]);
    out << '\n';
  }
}

ModelParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kCheckpointMagic) throw ValidationError("checkpoint: unsupported format");

  auto expect = [&](const std::string& key) {
    std::string k;
    if (!(in >> k) || k != key) throw ValidationError("checkpoint: expected '" + key + "'");
  };
  auto token = [&]() {
    std::string t;
    if (!(in >> t)) throw ValidationError("checkpoint: truncated");
    return t;
  };
  auto count = [&]() { return static_cast<std::size_t>(std::stoull(token())); };

  ModelParams p;
  expect("arch");
  p.arch = Arch::parse(token());
  expect("input_dim");
  p.input_dim = count();
  expect("num_classes");
  p.num_classes = count();
  expect("layers");
  const std::size_t n_layers = count();
  for (std::size_t li = 0; li < n_layers; ++li) {
    Layer l;
    expect("weight");
    const std::size_t rows = count();
    const std::size_t cols = count();
    l.weight = Matrix(rows, cols);
    for (double& v : l.weight.data) v = parse_double(token(), "checkpoint");
    expect("bias");
    l.bias.resize(count());
    for (double& v : l.bias) v = parse_double(token(), "checkpoint");
    p.layers.push_back(std::move(l));
  }
  const ModelParams reference = init_params(p.arch, p.input_dim, p.num_classes, 0);
  if (!p.same_shape(reference)) throw ValidationError("checkpoint: layer shapes do not match architecture");
  return p;
}

}  // namespace fal
