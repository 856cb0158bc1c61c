// Copyright 2026 The fedaf Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Minimal feed-forward network engine: a ReLU multilayer perceptron with a
// softmax output, explicit backprop and plain SGD. All functions are pure;
// parameters are passed and returned by value.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedaf/error.hpp"
#include "fedaf/rng.hpp"

namespace fedaf {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using MatrixRef = Eigen::Ref<const Matrix>;

// Layer widths from input to class count; hidden layers use a rectifier.
class ModelSpec {
 public:
  ModelSpec() = default;
  explicit ModelSpec(std::vector<std::size_t> layer_dims) : dims_(std::move(layer_dims)) {
    if (dims_.size() < 2) throw InvalidArgument("ModelSpec needs at least input and output dims");
    for (std::size_t d : dims_) {
      if (d == 0) throw InvalidArgument("ModelSpec dims must be >= 1");
    }
  }

  std::span<const std::size_t> layer_dims() const { return dims_; }
  std::size_t input_dim() const { return dims_.front(); }
  std::size_t class_count() const { return dims_.back(); }
  std::size_t layer_count() const { return dims_.size() - 1; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) n += dims_[l] * dims_[l + 1] + dims_[l + 1];
    return n;
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;

 private:
  std::vector<std::size_t> dims_;
};

// One dense layer inside the flat parameter array: a rows x cols row-major
// weight block followed by `bias` bias entries.
struct LayerShape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t bias = 0;
  std::size_t offset = 0;

  std::size_t size() const { return rows * cols + bias; }
  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

// Flat model parameters with per-layer shape metadata.
class ParamVector {
 public:
  ParamVector() = default;

  explicit ParamVector(const ModelSpec& spec) {
    std::size_t offset = 0;
    const auto dims = spec.layer_dims();
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      LayerShape s{dims[l], dims[l + 1], dims[l + 1], offset};
      offset += s.size();
      shapes_.push_back(s);
    }
    values_ = Vector::Zero(static_cast<Eigen::Index>(offset));
  }

  ParamVector(std::vector<LayerShape> shapes, Vector values)
      : shapes_(std::move(shapes)), values_(std::move(values)) {
    std::size_t offset = 0;
    for (const auto& s : shapes_) {
      if (s.offset != offset) throw DimensionError("ParamVector: non-contiguous layer offsets");
      offset += s.size();
    }
    if (offset != static_cast<std::size_t>(values_.size())) {
      throw DimensionError("ParamVector: value count " + std::to_string(values_.size()) +
                           " != shape total " + std::to_string(offset));
    }
  }

  // Same shapes, every value set to `fill`.
  ParamVector like(double fill) const {
    return ParamVector(shapes_, Vector::Constant(values_.size(), fill));
  }

  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
  std::size_t layer_count() const { return shapes_.size(); }
  std::span<const LayerShape> shapes() const { return shapes_; }

  const Vector& values() const { return values_; }
  Vector& values() { return values_; }

  Eigen::Map<const Matrix> weights(std::size_t layer) const {
    const auto& s = shapes_.at(layer);
    return {values_.data() + s.offset, static_cast<Eigen::Index>(s.rows),
            static_cast<Eigen::Index>(s.cols)};
  }
  Eigen::Map<Matrix> weights(std::size_t layer) {
    const auto& s = shapes_.at(layer);
    return {values_.data() + s.offset, static_cast<Eigen::Index>(s.rows),
            static_cast<Eigen::Index>(s.cols)};
  }
  Eigen::Map<const Vector> bias(std::size_t layer) const {
    const auto& s = shapes_.at(layer);
    return {values_.data() + s.offset + s.rows * s.cols, static_cast<Eigen::Index>(s.bias)};
  }
  Eigen::Map<Vector> bias(std::size_t layer) {
    const auto& s = shapes_.at(layer);
    return {values_.data() + s.offset + s.rows * s.cols, static_cast<Eigen::Index>(s.bias)};
  }

  bool same_shape(const ParamVector& other) const { return shapes_ == other.shapes_; }

  bool all_finite() const { return values_.allFinite(); }

  // Bitwise equality of values (and shapes).
  friend bool operator==(const ParamVector& a, const ParamVector& b) {
    if (a.shapes_ != b.shapes_) return false;
    return std::equal(a.values_.data(), a.values_.data() + a.values_.size(), b.values_.data(),
                      [](double x, double y) { return std::bit_cast<std::uint64_t>(x) ==
                                                      std::bit_cast<std::uint64_t>(y); });
  }

 private:
  std::vector<LayerShape> shapes_;
  Vector values_;
};

// N x d features paired with N x C row-stochastic labels.
struct Batch {
  Matrix features;
  Matrix labels;

  std::size_t size() const { return static_cast<std::size_t>(features.rows()); }

  // Checks the Batch invariants; throws on the first violation.
  void validate() const {
    if (features.rows() == 0) throw InvalidArgument("Batch is empty");
    if (features.rows() != labels.rows()) {
      throw DimensionError("Batch: " + std::to_string(features.rows()) + " feature rows vs " +
                           std::to_string(labels.rows()) + " label rows");
    }
    for (Eigen::Index i = 0; i < labels.rows(); ++i) {
      const double s = labels.row(i).sum();
      if (std::abs(s - 1.0) > 1e-9 || labels.row(i).minCoeff() < 0.0) {
        throw InvalidArgument("Batch: label row " + std::to_string(i) + " is not on the simplex");
      }
    }
  }
};

// Rows of `m` selected by `rows`, in that order.
inline Matrix gather_rows(const MatrixRef& m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

inline Batch gather(const Batch& b, std::span<const std::size_t> rows) {
  return {gather_rows(b.features, rows), gather_rows(b.labels, rows)};
}

// Index of the largest entry; ties go to the lowest index.
template <typename Row>
std::size_t argmax(const Row& row) {
  std::size_t best = 0;
  for (Eigen::Index c = 1; c < row.size(); ++c) {
    if (row(c) > row(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(c);
  }
  return best;
}

// Weights ~ U(-sqrt(6/(fan_in+fan_out)), +...), biases zero.
inline ParamVector xavier_init(const ModelSpec& spec, std::uint64_t seed) {
  ParamVector params(spec);
  Rng rng(seed);
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    const auto& s = params.shapes()[l];
    const double limit = std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
    auto w = params.weights(l);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-limit, limit);
    }
  }
  return params;
}

namespace detail {

inline void check_compatible(const ParamVector& params, const ModelSpec& spec,
                             Eigen::Index feature_cols) {
  const auto dims = spec.layer_dims();
  if (params.layer_count() != spec.layer_count()) {
    throw DimensionError("params have " + std::to_string(params.layer_count()) +
                         " layers, spec has " + std::to_string(spec.layer_count()));
  }
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    const auto& s = params.shapes()[l];
    if (s.rows != dims[l] || s.cols != dims[l + 1] || s.bias != dims[l + 1]) {
      throw DimensionError("layer " + std::to_string(l) + ": params are " +
                           std::to_string(s.rows) + "x" + std::to_string(s.cols) +
                           ", spec expects " + std::to_string(dims[l]) + "x" +
                           std::to_string(dims[l + 1]));
    }
  }
  if (static_cast<std::size_t>(feature_cols) != spec.input_dim()) {
    throw DimensionError("layer 0: feature width " + std::to_string(feature_cols) +
                         " != input dim " + std::to_string(spec.input_dim()));
  }
}

// Pre-activations of every layer; the last entry holds the logits.
struct ForwardCache {
  std::vector<Matrix> pre;
};

inline ForwardCache run_forward(const ParamVector& params, const MatrixRef& features) {
  ForwardCache cache;
  cache.pre.reserve(params.layer_count());
  Matrix act;
  for (std::size_t l = 0; l < params.layer_count(); ++l) {
    Matrix z;
    if (l == 0) {
      z.noalias() = features * params.weights(0);
    } else {
      z.noalias() = act * params.weights(l);
    }
    z.rowwise() += params.bias(l).transpose();
    if (l + 1 < params.layer_count()) act = z.cwiseMax(0.0);
    cache.pre.push_back(std::move(z));
  }
  return cache;
}

// Row-wise log-softmax with max subtraction.
inline Matrix log_softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

// Backprop from output-layer deltas (dLoss/dlogits per row). When `squared`
// is set, accumulates sum over rows of squared per-row gradients instead of
// the plain gradient.
inline ParamVector backward(const ParamVector& params, const MatrixRef& features,
                            const ForwardCache& cache, Matrix delta, bool squared) {
  ParamVector grad = params.like(0.0);
  for (std::size_t l = params.layer_count(); l-- > 0;) {
    Matrix input_act;
    if (l > 0) input_act = cache.pre[l - 1].cwiseMax(0.0);
    const MatrixRef in = l > 0 ? MatrixRef(input_act) : features;
    if (squared) {
      grad.weights(l).noalias() = in.cwiseAbs2().transpose() * delta.cwiseAbs2();
      grad.bias(l) = delta.cwiseAbs2().colwise().sum().transpose();
    } else {
      grad.weights(l).noalias() = in.transpose() * delta;
      grad.bias(l) = delta.colwise().sum().transpose();
    }
    if (l > 0) {
      Matrix back;
      back.noalias() = delta * params.weights(l).transpose();
      const auto& z = cache.pre[l - 1];
      delta = back.array() * (z.array() > 0.0).cast<double>();
    }
  }
  return grad;
}

}  // namespace detail

// Softmax class probabilities, N x C.
inline Matrix forward(const ParamVector& params, const ModelSpec& spec, const MatrixRef& features) {
  detail::check_compatible(params, spec, features.cols());
  const auto cache = detail::run_forward(params, features);
  return detail::log_softmax(cache.pre.back()).array().exp();
}

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

// Mean cross-entropy -sum_c y_c log p_c over rows, and its gradient.
inline LossGrad loss_and_grad(const ParamVector& params, const ModelSpec& spec,
                              const MatrixRef& features, const MatrixRef& labels) {
  detail::check_compatible(params, spec, features.cols());
  if (features.rows() == 0) throw InvalidArgument("loss_and_grad: empty batch");
  if (labels.rows() != features.rows() ||
      static_cast<std::size_t>(labels.cols()) != spec.class_count()) {
    throw DimensionError("loss_and_grad: labels are " + std::to_string(labels.rows()) + "x" +
                         std::to_string(labels.cols()));
  }
  const auto n = static_cast<double>(features.rows());
  const auto cache = detail::run_forward(params, features);
  const Matrix logp = detail::log_softmax(cache.pre.back());

  double loss = 0.0;
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    for (Eigen::Index c = 0; c < labels.cols(); ++c) {
      if (labels(i, c) != 0.0) loss -= labels(i, c) * logp(i, c);
    }
  }
  loss /= n;
  if (!std::isfinite(loss)) throw DivergenceError("loss_and_grad: non-finite loss");

  // d/dz of -sum y log softmax(z) is p * sum(y) - y.
  Matrix delta = logp.array().exp().colwise() * labels.rowwise().sum().array();
  delta -= labels;
  delta /= n;
  LossGrad out{loss, detail::backward(params, features, cache, std::move(delta), false)};
  if (!out.grad.all_finite()) throw DivergenceError("loss_and_grad: non-finite gradient");
  return out;
}

inline LossGrad loss_and_grad(const ParamVector& params, const ModelSpec& spec, const Batch& batch) {
  return loss_and_grad(params, spec, batch.features, batch.labels);
}

// Sum over rows of the elementwise-squared per-sample cross-entropy gradient.
// For an MLP the squared per-sample weight gradient factorises as
// (input^2)^T (delta^2), so this needs a single batched pass.
inline ParamVector squared_sample_grad_sum(const ParamVector& params, const ModelSpec& spec,
                                           const MatrixRef& features, const MatrixRef& labels) {
  detail::check_compatible(params, spec, features.cols());
  const auto cache = detail::run_forward(params, features);
  const Matrix logp = detail::log_softmax(cache.pre.back());
  Matrix delta = logp.array().exp().colwise() * labels.rowwise().sum().array();
  delta -= labels;
  return detail::backward(params, features, cache, std::move(delta), true);
}

inline ParamVector sgd_step(const ParamVector& params, const ParamVector& grad, double lr) {
  if (!params.same_shape(grad)) throw DimensionError("sgd_step: parameter/gradient shape mismatch");
  ParamVector out = params;
  out.values() -= lr * grad.values();
  return out;
}

inline std::vector<std::size_t> predict(const ParamVector& params, const ModelSpec& spec,
                                        const MatrixRef& features) {
  detail::check_compatible(params, spec, features.cols());
  const auto cache = detail::run_forward(params, features);
  const Matrix& logits = cache.pre.back();
  std::vector<std::size_t> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) out[static_cast<std::size_t>(i)] = argmax(logits.row(i));
  return out;
}

// Fraction of rows whose predicted class equals argmax of the label row.
inline double accuracy(const ParamVector& params, const ModelSpec& spec, const MatrixRef& features,
                       const MatrixRef& labels) {
  if (features.rows() == 0) return 0.0;
  const auto pred = predict(params, spec, features);
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    if (pred[static_cast<std::size_t>(i)] == argmax(labels.row(i))) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.rows());
}

inline double accuracy(const ParamVector& params, const ModelSpec& spec, const Batch& batch) {
  return accuracy(params, spec, batch.features, batch.labels);
}

}  // namespace fedaf
