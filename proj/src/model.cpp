#include "fedln/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <random>

namespace fedln {

namespace {

constexpr double kLogClamp = 1e-12;

void softmax_row(std::span<const double> z, std::span<double> out, double temperature) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : z) mx = std::max(mx, v / temperature);
  double sum = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    out[k] = std::exp(z[k] / temperature - mx);
    sum += out[k];
  }
  for (auto& v : out) v /= sum;
}

// log softmax(z / T), stable.
void log_softmax_row(std::span<const double> z, std::span<double> out, double temperature) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : z) mx = std::max(mx, v / temperature);
  double sum = 0.0;
  for (double v : z) sum += std::exp(v / temperature - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t k = 0; k < z.size(); ++k) out[k] = z[k] / temperature - lse;
}

// Affine map: out = in * W^T + b.
Matrix affine(const DenseLayer& layer, const Matrix& in) {
  Matrix out(in.rows, layer.out);
  for (std::size_t r = 0; r < in.rows; ++r) {
    const double* x = in.data.data() + r * in.cols;
    for (int o = 0; o < layer.out; ++o) {
      const double* w = layer.weights.data() + static_cast<std::size_t>(o) * layer.in;
      double acc = layer.biases[o];
      for (int i = 0; i < layer.in; ++i) acc += w[i] * x[i];
      out.data[r * out.cols + o] = acc;
    }
  }
  return out;
}

Matrix to_matrix(std::span<const float> features, std::size_t n, std::size_t d) {
  require(features.size() == n * d, "forward: feature buffer does not match n x d");
  Matrix m(n, d);
  std::copy(features.begin(), features.end(), m.data.begin());
  return m;
}

// Pre-activations of every layer plus post-activations feeding the next one.
struct Trace {
  std::vector<Matrix> inputs;  // inputs[l] feeds layer l
  Matrix logits;
};

Trace run(const Mlp& model, const Matrix& x) {
  require(!model.layers.empty(), "forward: model has no layers");
  require(x.cols == static_cast<std::size_t>(model.input_dim()),
          "forward: feature dim " + std::to_string(x.cols) + " != model input " +
              std::to_string(model.input_dim()));
  Trace t;
  t.inputs.reserve(model.layers.size());
  t.inputs.push_back(x);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    Matrix z = affine(model.layers[l], t.inputs.back());
    if (l + 1 == model.layers.size()) {
      t.logits = std::move(z);
    } else {
      for (auto& v : z.data) v = v > 0.0 ? v : 0.0;
      t.inputs.push_back(std::move(z));
    }
  }
  return t;
}

}  // namespace

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.biases.size();
  return n;
}

std::vector<double> Mlp::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& l : layers) {
    flat.insert(flat.end(), l.weights.begin(), l.weights.end());
    flat.insert(flat.end(), l.biases.begin(), l.biases.end());
  }
  return flat;
}

void Mlp::assign(std::span<const double> flat) {
  require(flat.size() == parameter_count(), "Mlp::assign: parameter count mismatch");
  std::size_t pos = 0;
  for (auto& l : layers) {
    std::copy_n(flat.begin() + pos, l.weights.size(), l.weights.begin());
    pos += l.weights.size();
    std::copy_n(flat.begin() + pos, l.biases.size(), l.biases.begin());
    pos += l.biases.size();
  }
}

Mlp init_weights(std::span<const int> layer_sizes, std::uint64_t seed) {
  require(layer_sizes.size() >= 2, "init_weights: need at least an input and an output layer");
  for (int s : layer_sizes) require(s >= 1, "init_weights: layer sizes must be positive");
  Mlp m;
  m.layer_sizes.assign(layer_sizes.begin(), layer_sizes.end());
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    DenseLayer layer;
    layer.in = layer_sizes[l];
    layer.out = layer_sizes[l + 1];
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / layer.in));
    layer.weights.resize(static_cast<std::size_t>(layer.in) * layer.out);
    for (auto& w : layer.weights) w = normal(rng);
    layer.biases.assign(layer.out, 0.0);
    m.layers.push_back(std::move(layer));
  }
  return m;
}

Matrix softmax(const Matrix& logits, double temperature) {
  require(temperature > 0.0, "softmax: temperature must be > 0");
  Matrix p(logits.rows, logits.cols);
  for (std::size_t r = 0; r < logits.rows; ++r) softmax_row(logits.row(r), p.row(r), temperature);
  return p;
}

ForwardResult forward(const Mlp& model, const Matrix& features) {
  ForwardResult res;
  res.logits = run(model, features).logits;
  res.probabilities = softmax(res.logits);
  return res;
}

ForwardResult forward(const Mlp& model, std::span<const float> features, std::size_t n) {
  return forward(model, to_matrix(features, n, static_cast<std::size_t>(model.input_dim())));
}

double cross_entropy(const Matrix& probabilities, std::span<const ClassIndex> labels) {
  require(labels.size() == probabilities.rows, "cross_entropy: label count mismatch");
  if (labels.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    require(labels[r] < probabilities.cols, "cross_entropy: label out of range");
    sum -= std::log(std::max(probabilities(r, labels[r]), kLogClamp));
  }
  return sum / static_cast<double>(labels.size());
}

double kd_loss(const Matrix& student_logits, const Matrix& teacher_probabilities, double temperature) {
  require(temperature > 0.0, "kd_loss: temperature must be > 0");
  require(student_logits.rows == teacher_probabilities.rows &&
              student_logits.cols == teacher_probabilities.cols,
          "kd_loss: shape mismatch");
  if (student_logits.rows == 0) return 0.0;
  std::vector<double> logp(student_logits.cols);
  double sum = 0.0;
  for (std::size_t r = 0; r < student_logits.rows; ++r) {
    log_softmax_row(student_logits.row(r), logp, temperature);
    for (std::size_t k = 0; k < student_logits.cols; ++k) {
      const double q = teacher_probabilities(r, k);
      if (q > 0.0) sum += q * (std::log(q) - logp[k]);
    }
  }
  return temperature * temperature * sum / static_cast<double>(student_logits.rows);
}

void TrainConfig::validate() const {
  require(std::isfinite(learning_rate) && learning_rate >= 0.0, "train config: learning_rate must be >= 0");
  require(batch_size >= 1, "train config: batch_size must be >= 1");
  require(local_epochs >= 1, "train config: local_epochs must be >= 1");
  require(std::isfinite(weight_decay) && weight_decay >= 0.0, "train config: weight_decay must be >= 0");
}

void LossMix::validate() const {
  require(beta >= 0.0 && beta <= 1.0, "loss mix: beta must lie in [0,1]");
  require(temperature > 0.0, "loss mix: temperature must be > 0");
  require(beta == 0.0 || teacher.has_value(), "loss mix: beta > 0 requires a teacher");
}

LossAndGradient loss_and_gradient(const Mlp& model, const Matrix& batch,
                                  std::span<const ClassIndex> labels, const LossMix& mix,
                                  double weight_decay) {
  require(labels.size() == batch.rows && batch.rows > 0, "loss_and_gradient: bad batch");
  const std::size_t n = batch.rows;
  const std::size_t c = static_cast<std::size_t>(model.num_classes());
  const double inv_n = 1.0 / static_cast<double>(n);
  const bool use_kd = mix.beta > 0.0;

  Trace trace = run(model, batch);
  Matrix probs = softmax(trace.logits);

  LossAndGradient out;
  out.loss = (1.0 - mix.beta) * cross_entropy(probs, labels);

  // dL/dlogits
  Matrix delta(n, c);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < c; ++k)
      delta(r, k) = (1.0 - mix.beta) * (probs(r, k) - (labels[r] == k ? 1.0 : 0.0)) * inv_n;

  if (use_kd) {
    const Matrix teacher_probs = softmax(run(*mix.teacher, batch).logits, mix.temperature);
    out.loss += mix.beta * kd_loss(trace.logits, teacher_probs, mix.temperature);
    const Matrix student_t = softmax(trace.logits, mix.temperature);
    const double scale = mix.beta * mix.temperature * inv_n;
    for (std::size_t i = 0; i < delta.data.size(); ++i)
      delta.data[i] += scale * (student_t.data[i] - teacher_probs.data[i]);
  }

  std::vector<std::vector<double>> grads_w(model.layers.size());
  std::vector<std::vector<double>> grads_b(model.layers.size());
  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const DenseLayer& layer = model.layers[li];
    const Matrix& in = trace.inputs[li];
    auto& gw = grads_w[li];
    auto& gb = grads_b[li];
    gw.assign(layer.weights.size(), 0.0);
    gb.assign(layer.out, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      const double* x = in.data.data() + r * in.cols;
      for (int o = 0; o < layer.out; ++o) {
        const double d = delta(r, o);
        if (d == 0.0) continue;
        gb[o] += d;
        double* g = gw.data() + static_cast<std::size_t>(o) * layer.in;
        for (int i = 0; i < layer.in; ++i) g[i] += d * x[i];
      }
    }
    if (weight_decay > 0.0) {
      double sq = 0.0;
      for (std::size_t i = 0; i < gw.size(); ++i) {
        gw[i] += weight_decay * layer.weights[i];
        sq += layer.weights[i] * layer.weights[i];
      }
      out.loss += 0.5 * weight_decay * sq;
    }
    if (li == 0) break;
    Matrix prev(n, static_cast<std::size_t>(layer.in));
    for (std::size_t r = 0; r < n; ++r) {
      for (int o = 0; o < layer.out; ++o) {
        const double d = delta(r, o);
        if (d == 0.0) continue;
        const double* w = layer.weights.data() + static_cast<std::size_t>(o) * layer.in;
        double* p = prev.data.data() + r * prev.cols;
        for (int i = 0; i < layer.in; ++i) p[i] += d * w[i];
      }
      // ReLU derivative: zero where the activation was clamped.
      for (int i = 0; i < layer.in; ++i)
        if (in(r, i) <= 0.0) prev(r, i) = 0.0;
    }
    delta = std::move(prev);
  }

  out.gradient.reserve(model.parameter_count());
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    out.gradient.insert(out.gradient.end(), grads_w[li].begin(), grads_w[li].end());
    out.gradient.insert(out.gradient.end(), grads_b[li].begin(), grads_b[li].end());
  }
  return out;
}

TrainResult train_local(const Mlp& model, const ClientData& data, const TrainConfig& config,
                        const LossMix& mix) {
  config.validate();
  mix.validate();
  require(data.size() > 0, "train_local: client has no data");
  require(data.dim == model.input_dim(), "train_local: feature dim does not match the model");
  if (mix.teacher) require(mix.teacher->same_shape(model), "train_local: teacher shape mismatch");

  TrainResult res{model, {}};
  std::vector<double> params = model.flatten();
  const std::size_t n = data.size();
  const std::size_t d = static_cast<std::size_t>(data.dim);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(config.seed);

  Matrix batch;
  std::vector<ClassIndex> labels;
  for (int epoch = 0; epoch < config.local_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t len = std::min<std::size_t>(config.batch_size, n - start);
      batch = Matrix(len, d);
      labels.resize(len);
      for (std::size_t r = 0; r < len; ++r) {
        const std::size_t idx = order[start + r];
        std::copy_n(data.features.begin() + idx * d, d, batch.data.begin() + r * d);
        labels[r] = data.labels[idx];
      }
      const auto lg = loss_and_gradient(res.model, batch, labels, mix, config.weight_decay);
      loss_sum += lg.loss * static_cast<double>(len);
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= config.learning_rate * lg.gradient[i];
      res.model.assign(params);
    }
    res.epoch_losses.push_back(loss_sum / static_cast<double>(n));
  }
  return res;
}

double accuracy(const Mlp& model, std::span<const float> features, std::span<const ClassIndex> labels) {
  if (labels.empty()) return 0.0;
  const auto out = forward(model, features, labels.size());
  std::size_t hits = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    auto row = out.logits.row(r);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == labels[r]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

namespace {

constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string encode_doubles(const std::vector<double>& v) {
  static_assert(std::endian::native == std::endian::little);
  std::vector<std::uint8_t> bytes(v.size() * sizeof(double));
  std::memcpy(bytes.data(), v.data(), bytes.size());
  return base64_encode(bytes);
}

std::vector<double> decode_doubles(const std::string& s, std::size_t expected) {
  const auto bytes = base64_decode(s);
  if (bytes.size() != expected * sizeof(double))
    throw ParseError("checkpoint: payload holds " + std::to_string(bytes.size()) + " bytes, expected " +
                     std::to_string(expected * sizeof(double)));
  std::vector<double> v(expected);
  std::memcpy(v.data(), bytes.data(), bytes.size());
  return v;
}

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += kB64[v & 63];
  }
  if (i < bytes.size()) {
    std::uint32_t v = bytes[i] << 16;
    if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kB64[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  auto value = [](char ch) -> int {
    if (ch >= 'A' && ch <= 'Z') return ch - 'A';
    if (ch >= 'a' && ch <= 'z') return ch - 'a' + 26;
    if (ch >= '0' && ch <= '9') return ch - '0' + 52;
    if (ch == '+') return 62;
    if (ch == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw ParseError("base64: length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int q[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char ch = text[i + k];
      if (ch == '=' && i + 4 == text.size() && k >= 2) {
        q[k] = 0;
        ++pad;
        continue;
      }
      if (pad) throw ParseError("base64: data after padding at offset " + std::to_string(i + k));
      q[k] = value(ch);
      if (q[k] < 0) throw ParseError("base64: invalid character at offset " + std::to_string(i + k));
    }
    const std::uint32_t v = (q[0] << 18) | (q[1] << 12) | (q[2] << 6) | q[3];
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v & 0xff));
  }
  return out;
}

nlohmann::json to_checkpoint(const Mlp& model) {
  nlohmann::json j;
  j["layer_sizes"] = model.layer_sizes;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : model.layers)
    j["layers"].push_back({{"weights", encode_doubles(l.weights)}, {"biases", encode_doubles(l.biases)}});
  return j;
}

Mlp from_checkpoint(const nlohmann::json& j) {
  Mlp m;
  try {
    m.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
    const auto& layers = j.at("layers");
    if (m.layer_sizes.size() < 2 || layers.size() + 1 != m.layer_sizes.size())
      throw ParseError("checkpoint: layer count does not match layer_sizes");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      DenseLayer layer;
      layer.in = m.layer_sizes[l];
      layer.out = m.layer_sizes[l + 1];
      if (layer.in < 1 || layer.out < 1) throw ParseError("checkpoint: non-positive layer size");
      layer.weights = decode_doubles(layers[l].at("weights").get<std::string>(),
                                     static_cast<std::size_t>(layer.in) * layer.out);
      layer.biases = decode_doubles(layers[l].at("biases").get<std::string>(), layer.out);
      m.layers.push_back(std::move(layer));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  return m;
}

}  // namespace fedln
