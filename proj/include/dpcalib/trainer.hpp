#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dpcalib/dataset.hpp"
#include "dpcalib/errors.hpp"
#include "dpcalib/mechanisms.hpp"
#include "dpcalib/rng.hpp"

namespace dpcalib {

// Surrogate classifier: multinomial logistic regression over bag-of-words
// counts, optionally with one tanh hidden layer. Parameters live in a single
// flat vector; layout for the linear model is [W (C x V row-major), b (C)],
// for the MLP [W1 (H x V), b1 (H), W2 (C x H), b2 (C)].
struct ModelShape {
  int vocab_size = 0;
  int num_classes = 2;
  int hidden_dim = 0;  // 0 = linear model

  Eigen::Index param_count() const {
    if (hidden_dim == 0)
      return static_cast<Eigen::Index>(num_classes) * vocab_size + num_classes;
    return static_cast<Eigen::Index>(hidden_dim) * vocab_size + hidden_dim +
           static_cast<Eigen::Index>(num_classes) * hidden_dim + num_classes;
  }

  void validate() const {
    if (vocab_size < 1 || num_classes < 2 || hidden_dim < 0)
      throw DataError("ModelShape: invalid dimensions");
  }
};

struct ModelParams {
  ModelShape shape;
  Eigen::VectorXd theta;

  static ModelParams zeros(const ModelShape& shape) {
    shape.validate();
    ModelParams p;
    p.shape = shape;
    p.theta = Eigen::VectorXd::Zero(shape.param_count());
    return p;
  }
};

namespace model_detail {

// Linear block views into the flat parameter vector.
inline Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
weight_block(const Eigen::VectorXd& theta, Eigen::Index offset, int rows, int cols) {
  return {theta.data() + offset, rows, cols};
}

inline Eigen::VectorXd softmax(Eigen::VectorXd logits) {
  const double m = logits.maxCoeff();
  logits = (logits.array() - m).exp();
  return logits / logits.sum();
}

struct Forward {
  Eigen::VectorXd probs;
  Eigen::VectorXd hidden;      // post-tanh activations (MLP only)
  double loss = 0.0;
};

inline Forward forward(const ModelParams& p, const Example& ex) {
  const auto& s = p.shape;
  Forward f;
  if (s.hidden_dim == 0) {
    Eigen::VectorXd logits =
        p.theta.segment(static_cast<Eigen::Index>(s.num_classes) * s.vocab_size, s.num_classes);
    const auto w = weight_block(p.theta, 0, s.num_classes, s.vocab_size);
    for (const auto& [idx, val] : ex.features) logits += w.col(idx) * val;
    f.probs = softmax(std::move(logits));
  } else {
    const Eigen::Index w1_size = static_cast<Eigen::Index>(s.hidden_dim) * s.vocab_size;
    const auto w1 = weight_block(p.theta, 0, s.hidden_dim, s.vocab_size);
    Eigen::VectorXd pre = p.theta.segment(w1_size, s.hidden_dim);
    for (const auto& [idx, val] : ex.features) pre += w1.col(idx) * val;
    f.hidden = pre.array().tanh();
    const Eigen::Index w2_off = w1_size + s.hidden_dim;
    const auto w2 = weight_block(p.theta, w2_off, s.num_classes, s.hidden_dim);
    Eigen::VectorXd logits =
        p.theta.segment(w2_off + static_cast<Eigen::Index>(s.num_classes) * s.hidden_dim,
                        s.num_classes) +
        w2 * f.hidden;
    f.probs = softmax(std::move(logits));
  }
  f.loss = -std::log(std::max(f.probs[ex.label], 1e-300));
  return f;
}

}  // namespace model_detail

inline double per_sample_loss(const ModelParams& p, const Example& ex) {
  return model_detail::forward(p, ex).loss;
}

inline int predict(const ModelParams& p, const Example& ex) {
  const auto f = model_detail::forward(p, ex);
  Eigen::Index best;
  f.probs.maxCoeff(&best);
  return static_cast<int>(best);
}

// Analytic gradient of the cross-entropy loss for one example, flattened to
// the parameter layout.
inline Eigen::VectorXd per_sample_gradient(const ModelParams& p, const Example& ex) {
  const auto& s = p.shape;
  const auto f = model_detail::forward(p, ex);
  Eigen::VectorXd d = f.probs;
  d[ex.label] -= 1.0;  // dL/dlogits
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(p.theta.size());
  if (s.hidden_dim == 0) {
    auto w_grad = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        grad.data(), s.num_classes, s.vocab_size);
    for (const auto& [idx, val] : ex.features) w_grad.col(idx) = d * val;
    grad.segment(static_cast<Eigen::Index>(s.num_classes) * s.vocab_size, s.num_classes) = d;
  } else {
    const Eigen::Index w1_size = static_cast<Eigen::Index>(s.hidden_dim) * s.vocab_size;
    const Eigen::Index w2_off = w1_size + s.hidden_dim;
    const auto w2 = model_detail::weight_block(p.theta, w2_off, s.num_classes, s.hidden_dim);
    // Backprop through tanh: delta1 = (W2^T d) .* (1 - h^2).
    const Eigen::VectorXd delta1 =
        (w2.transpose() * d).array() * (1.0 - f.hidden.array().square());
    auto w1_grad = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        grad.data(), s.hidden_dim, s.vocab_size);
    for (const auto& [idx, val] : ex.features) w1_grad.col(idx) = delta1 * val;
    grad.segment(w1_size, s.hidden_dim) = delta1;
    auto w2_grad = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        grad.data() + w2_off, s.num_classes, s.hidden_dim);
    w2_grad = d * f.hidden.transpose();
    grad.segment(w2_off + static_cast<Eigen::Index>(s.num_classes) * s.hidden_dim,
                 s.num_classes) = d;
  }
  return grad;
}

struct EvalMetrics {
  double accuracy = 0.0;
  double mcc = 0.0;
  double mean_loss = 0.0;
};

// Matthews correlation coefficient from the confusion matrix. For two
// classes this is the textbook binary formula; the multiclass form reduces
// to it. A degenerate denominator (e.g. a single predicted class) yields 0.
inline double mcc_from_confusion(const Eigen::MatrixXd& confusion) {
  const Eigen::Index k = confusion.rows();
  const double total = confusion.sum();
  double correct = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) correct += confusion(i, i);
  const Eigen::VectorXd pred_tot = confusion.colwise().sum();
  const Eigen::VectorXd true_tot = confusion.rowwise().sum();
  const double cov = correct * total - true_tot.dot(pred_tot);
  const double denom_pred = total * total - pred_tot.squaredNorm();
  const double denom_true = total * total - true_tot.squaredNorm();
  const double denom = std::sqrt(denom_pred) * std::sqrt(denom_true);
  if (denom == 0.0 || !std::isfinite(denom)) return 0.0;
  return std::clamp(cov / denom, -1.0, 1.0);
}

inline EvalMetrics evaluate(const ModelParams& p, const std::vector<Example>& split) {
  if (split.empty()) throw DataError("evaluate: empty split");
  Eigen::MatrixXd confusion = Eigen::MatrixXd::Zero(p.shape.num_classes, p.shape.num_classes);
  double loss_sum = 0.0;
  long correct = 0;
  for (const auto& ex : split) {
    const auto f = model_detail::forward(p, ex);
    Eigen::Index pred;
    f.probs.maxCoeff(&pred);
    confusion(ex.label, pred) += 1.0;
    loss_sum += f.loss;
    if (static_cast<int>(pred) == ex.label) ++correct;
  }
  EvalMetrics m;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(split.size());
  m.mcc = mcc_from_confusion(confusion);
  m.mean_loss = loss_sum / static_cast<double>(split.size());
  return m;
}

// Train accuracy minus test accuracy, in percentage points (negative when
// the model generalises better than it fits).
inline double train_test_gap(const ModelParams& p, const Dataset& data) {
  if (data.train.empty() || data.test.empty())
    throw DataError("train_test_gap: needs nonempty train and test splits");
  return 100.0 * (evaluate(p, data.train).accuracy - evaluate(p, data.test).accuracy);
}

struct TrainConfig {
  double learning_rate = 0.1;
  long lot_size = 32;
  long epochs = 10;
  NoiseSpec noise;
  std::uint64_t seed = 1;
  int hidden_dim = 0;
  std::size_t vocab_size = 2000;  // used by callers that build datasets

  void validate() const {
    if (!(learning_rate > 0.0)) throw DataError("TrainConfig: learning rate must be > 0");
    if (lot_size < 1) throw DataError("TrainConfig: lot size must be >= 1");
    if (epochs < 1) throw DataError("TrainConfig: epochs must be >= 1");
    noise.validate();
  }
};

struct EpochMetrics {
  long epoch = 0;
  EvalMetrics train;
  EvalMetrics validation;
  int zero_gradients = 0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochMetrics> epochs;
  int zero_gradients = 0;
};

inline ModelParams init_params(const ModelShape& shape, std::uint64_t seed) {
  ModelParams p = ModelParams::zeros(shape);
  if (shape.hidden_dim > 0) {
    // Scaled uniform init for the MLP; the linear model starts at zero.
    RngStream rng(seed);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(shape.vocab_size));
    const Eigen::Index w1_size = static_cast<Eigen::Index>(shape.hidden_dim) * shape.vocab_size;
    for (Eigen::Index i = 0; i < w1_size; ++i) p.theta[i] = s1 * (2.0 * rng.uniform01() - 1.0);
    const double s2 = 1.0 / std::sqrt(static_cast<double>(shape.hidden_dim));
    const Eigen::Index w2_off = w1_size + shape.hidden_dim;
    const Eigen::Index w2_size = static_cast<Eigen::Index>(shape.num_classes) * shape.hidden_dim;
    for (Eigen::Index i = 0; i < w2_size; ++i)
      p.theta[w2_off + i] = s2 * (2.0 * rng.uniform01() - 1.0);
  }
  return p;
}

// The private training loop: per step, sample a lot without replacement
// (shuffled fixed-size batches), compute per-sample gradients, aggregate
// through the mechanism, and descend. Bitwise deterministic for a fixed
// seed; aborts with a diagnostic if the parameters stop being finite.
inline TrainResult private_train(const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.train.empty()) throw DataError("private_train: empty training split");
  const long n = static_cast<long>(data.train.size());
  if (cfg.lot_size > n) throw DataError("private_train: lot size exceeds training set");

  ModelShape shape{static_cast<int>(data.vocab.size()), data.num_classes, cfg.hidden_dim};
  RngStream root(cfg.seed);
  TrainResult result;
  result.params = init_params(shape, root.substream(0).key());

  const long steps_per_epoch = (n + cfg.lot_size - 1) / cfg.lot_size;
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Eigen::VectorXd> lot_grads;
  long global_step = 0;

  for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
    RngStream shuffle_rng = root.substream(1, static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = shuffle_rng.uniform_index(i);
      std::swap(order[i - 1], order[j]);
    }
    int epoch_zero_grads = 0;
    for (long step = 0; step < steps_per_epoch; ++step, ++global_step) {
      const std::size_t begin = static_cast<std::size_t>(step * cfg.lot_size);
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.lot_size));
      lot_grads.clear();
      for (std::size_t i = begin; i < end; ++i)
        lot_grads.push_back(per_sample_gradient(result.params, data.train[order[i]]));
      RngStream step_rng = root.substream(2, static_cast<std::uint64_t>(global_step));
      NoisedStep noised = dp_noise_step(lot_grads, cfg.noise, step_rng);
      epoch_zero_grads += noised.zero_gradients;
      result.params.theta -= cfg.learning_rate * noised.gradient;
      if (!result.params.theta.allFinite())
        throw NumericError("private_train: non-finite parameters at step " +
                           std::to_string(global_step) + " (diverged; reduce the learning rate)");
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.train = evaluate(result.params, data.train);
    if (!data.validation.empty()) em.validation = evaluate(result.params, data.validation);
    em.zero_gradients = epoch_zero_grads;
    result.zero_gradients += epoch_zero_grads;
    if (!std::isfinite(em.train.mean_loss))
      throw NumericError("private_train: non-finite loss after epoch " + std::to_string(epoch));
    result.epochs.push_back(std::move(em));
  }
  return result;
}

namespace model_io {

inline void append_double(std::string* out, double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out->append(buf, res.ptr);
}

}  // namespace model_io

// Portable versioned text format: shape header, vocabulary, then the flat
// parameter vector with shortest-round-trip doubles (identical seeds write
// byte-identical files).
inline void save_model(const ModelParams& p, const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write model file: " + path);
  std::string buf;
  buf += "dpcalib-model 1\n";
  buf += "vocab " + std::to_string(vocab.size()) + "\n";
  buf += "classes " + std::to_string(p.shape.num_classes) + "\n";
  buf += "hidden " + std::to_string(p.shape.hidden_dim) + "\n";
  for (const auto& t : vocab.tokens()) buf += t + "\n";
  buf += "params " + std::to_string(p.theta.size()) + "\n";
  for (Eigen::Index i = 0; i < p.theta.size(); ++i) {
    model_io::append_double(&buf, p.theta[i]);
    buf += "\n";
  }
  out << buf;
  if (!out) throw DataError("failed while writing model file: " + path);
}

struct LoadedModel {
  ModelParams params;
  Vocabulary vocab;
};

inline LoadedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file: " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "dpcalib-model" || version != 1)
    throw DataError(path + ": not a dpcalib model file");
  std::string key;
  std::size_t vocab_size = 0;
  int classes = 0, hidden = 0;
  in >> key >> vocab_size;
  if (key != "vocab") throw DataError(path + ": malformed header");
  in >> key >> classes;
  if (key != "classes") throw DataError(path + ": malformed header");
  in >> key >> hidden;
  if (key != "hidden") throw DataError(path + ": malformed header");
  std::vector<std::string> tokens(vocab_size);
  for (auto& t : tokens) {
    if (!(in >> t)) throw DataError(path + ": truncated vocabulary");
  }
  Eigen::Index count = 0;
  in >> key >> count;
  if (key != "params") throw DataError(path + ": malformed parameter header");
  LoadedModel m;
  m.vocab.set_tokens(std::move(tokens));
  m.params.shape = ModelShape{static_cast<int>(vocab_size), classes, hidden};
  m.params.shape.validate();
  if (count != m.params.shape.param_count())
    throw DataError(path + ": parameter count does not match shape");
  m.params.theta.resize(count);
  for (Eigen::Index i = 0; i < count; ++i) {
    if (!(in >> m.params.theta[i])) throw DataError(path + ": truncated parameters");
  }
  return m;
}

}  // namespace dpcalib
