#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedln/common.hpp"
#include "fedln/dataset.hpp"

namespace fedln {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct DenseLayer {
  int in = 0;
  int out = 0;
  std::vector<double> weights;  // out x in, row-major
  std::vector<double> biases;   // out

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Feed-forward classifier: ReLU on hidden layers, softmax on the output.
struct Mlp {
  std::vector<int> layer_sizes;
  std::vector<DenseLayer> layers;

  int input_dim() const { return layer_sizes.front(); }
  int num_classes() const { return layer_sizes.back(); }
  std::size_t parameter_count() const;

  /// All parameters, layer by layer, weights before biases.
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
  bool same_shape(const Mlp& other) const { return layer_sizes == other.layer_sizes; }

  friend bool operator==(const Mlp&, const Mlp&) = default;
};

/// He-normal weights (std = sqrt(2 / fan_in)), zero biases.
Mlp init_weights(std::span<const int> layer_sizes, std::uint64_t seed);

struct ForwardResult {
  Matrix logits;
  Matrix probabilities;
};

/// `features` is n x input_dim row-major.
ForwardResult forward(const Mlp& model, std::span<const float> features, std::size_t n);
ForwardResult forward(const Mlp& model, const Matrix& features);

/// Row-wise softmax of logits / temperature.
Matrix softmax(const Matrix& logits, double temperature = 1.0);

/// Mean of -log(max(p[label], 1e-12)).
double cross_entropy(const Matrix& probabilities, std::span<const ClassIndex> labels);

/// T^2 * KL(teacher_T || softmax(student_logits / T)), averaged over rows.
double kd_loss(const Matrix& student_logits, const Matrix& teacher_probabilities, double temperature);

struct TrainConfig {
  double learning_rate = 0.05;
  int batch_size = 32;
  int local_epochs = 1;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// (1 - beta) * CE + beta * kd_loss against `teacher`.
struct LossMix {
  double beta = 0.0;
  double temperature = 3.0;
  std::optional<Mlp> teacher;

  void validate() const;
};

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;  // same layout as Mlp::flatten()
};

/// Mixed loss and its analytic gradient over one batch, including the
/// weight-decay term 0.5 * wd * ||W||^2 on weights (not biases).
LossAndGradient loss_and_gradient(const Mlp& model, const Matrix& batch,
                                  std::span<const ClassIndex> labels, const LossMix& mix,
                                  double weight_decay = 0.0);

struct TrainResult {
  Mlp model;
  std::vector<double> epoch_losses;
};

/// Mini-batch SGD without momentum. Batch order is reshuffled every epoch
/// from a generator seeded with config.seed.
TrainResult train_local(const Mlp& model, const ClientData& data, const TrainConfig& config,
                        const LossMix& mix);

/// Fraction of rows whose argmax matches `labels`.
double accuracy(const Mlp& model, std::span<const float> features, std::span<const ClassIndex> labels);

// Checkpoints: {"layer_sizes": [...], "layers": [{"weights": b64, "biases": b64}, ...]}
// with little-endian f64 payloads.
nlohmann::json to_checkpoint(const Mlp& model);
Mlp from_checkpoint(const nlohmann::json& j);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

}  // namespace fedln
