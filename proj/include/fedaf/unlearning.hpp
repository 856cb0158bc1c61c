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

// Active-forgetting unlearning: fake-label memories from an untrained
// teacher ensemble, a diagonal-Fisher elastic penalty, and the continued
// training loop that overwrites the target data. Also the two reference
// arms: retraining from scratch and plain continued training on the
// memories.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "fedaf/data.hpp"
#include "fedaf/error.hpp"
#include "fedaf/federation.hpp"
#include "fedaf/nn.hpp"
#include "fedaf/parallel.hpp"
#include "fedaf/rng.hpp"

namespace fedaf {

enum class FakeLabelKind { kUniform, kRandom, kTeacher, kDebiasTeacher };

inline std::string_view to_string(FakeLabelKind k) {
  switch (k) {
    case FakeLabelKind::kUniform: return "uniform";
    case FakeLabelKind::kRandom: return "random";
    case FakeLabelKind::kTeacher: return "teacher";
    case FakeLabelKind::kDebiasTeacher: return "debias";
  }
  return "?";
}

inline FakeLabelKind parse_label_kind(std::string_view s) {
  if (s == "uniform") return FakeLabelKind::kUniform;
  if (s == "random") return FakeLabelKind::kRandom;
  if (s == "teacher") return FakeLabelKind::kTeacher;
  if (s == "debias" || s == "debias-teacher") return FakeLabelKind::kDebiasTeacher;
  throw InvalidArgument("unknown label kind '" + std::string(s) + "'");
}

enum class SigmaMode { kDynamic, kFixed };

// Unlearning-phase settings. The memory-generator knobs (teacher count and
// the debias weight) live here too since they are consumed by the same run.
struct EwcConfig {
  double lambda = 10.0;
  std::size_t ewc_epochs = 1;
  double learning_rate = 0.14;
  std::size_t batch_size = 128;
  SigmaMode sigma_mode = SigmaMode::kDynamic;
  double sigma_fixed = 1.0;
  std::size_t teacher_count = 10;

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("unlearn.lambda must be >= 0");
    if (ewc_epochs < 1) throw ConfigError("unlearn.ewc_epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("unlearn.learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("unlearn.batch_size must be >= 1");
    if (!(sigma_fixed >= 0.0 && sigma_fixed <= 1.0)) throw ConfigError("unlearn.sigma_fixed must be in [0,1]");
    if (teacher_count < 1) throw ConfigError("unlearn.teacher_count must be >= 1");
  }

  friend bool operator==(const EwcConfig&, const EwcConfig&) = default;
};

// Unlearn the rows `target_rows` (indices into client `client_id`'s local
// data), all of original class `target_class`.
struct UnlearnRequest {
  std::size_t client_id = 0;
  std::size_t target_class = 0;
  IndexSet target_rows;
};

// ---------------------------------------------------------------------------
// Memory generator.

class TeacherEnsemble {
 public:
  // `count` Xavier-initialized models; member q uses derive_seed(seed, {q}).
  TeacherEnsemble(const ModelSpec& spec, std::size_t count, std::uint64_t seed) : spec_(spec) {
    if (count < 1) throw InvalidArgument("TeacherEnsemble: need at least one teacher");
    for (std::size_t q = 0; q < count; ++q) members_.push_back(xavier_init(spec, derive_seed(seed, {q})));
  }
  TeacherEnsemble(const ModelSpec& spec, std::vector<ParamVector> members)
      : spec_(spec), members_(std::move(members)) {
    if (members_.empty()) throw InvalidArgument("TeacherEnsemble: need at least one teacher");
  }

  const ModelSpec& spec() const { return spec_; }
  std::size_t size() const { return members_.size(); }
  const std::vector<ParamVector>& members() const { return members_; }

 private:
  ModelSpec spec_;
  std::vector<ParamVector> members_;
};

// Mean of the teachers' softmax outputs, accumulated in member order.
inline Matrix teacher_label(const TeacherEnsemble& ensemble, const MatrixRef& features,
                            std::size_t jobs = 1) {
  std::vector<Matrix> outs(ensemble.size());
  parallel_for(ensemble.size(), jobs, [&](std::size_t q) {
    outs[q] = forward(ensemble.members()[q], ensemble.spec(), features);
  });
  Matrix mean = outs[0];
  for (std::size_t q = 1; q < outs.size(); ++q) mean += outs[q];
  mean /= static_cast<double>(outs.size());
  return mean;
}

// (1/C) / y_hat[target], clamped to [0,1]; 1 when y_hat[target] <= 1/C.
template <typename Row>
double dynamic_sigma(const Row& y_hat, std::size_t target) {
  const auto c = static_cast<double>(y_hat.size());
  if (target >= static_cast<std::size_t>(y_hat.size())) throw InvalidArgument("dynamic_sigma: target out of range");
  const double t = y_hat(static_cast<Eigen::Index>(target));
  if (t <= 1.0 / c) return 1.0;
  return std::clamp((1.0 / c) / t, 0.0, 1.0);
}

// Scales the coordinates marked by `y` (one-hot) by sigma and renormalizes
// to unit L1 norm.
template <typename RowA, typename RowB>
Eigen::RowVectorXd debias_label(const RowA& y_hat, const RowB& y, double sigma) {
  if (y_hat.size() != y.size()) throw DimensionError("debias_label: length mismatch");
  if (!(sigma >= 0.0 && sigma <= 1.0)) throw InvalidArgument("debias_label: sigma outside [0,1]");
  Eigen::RowVectorXd out(y_hat.size());
  if (sigma == 1.0) {
    // nu is all ones; skip the renormalization so the input comes back exactly.
    for (Eigen::Index c = 0; c < y_hat.size(); ++c) out(c) = y_hat(c);
    return out;
  }
  for (Eigen::Index c = 0; c < y_hat.size(); ++c) out(c) = (1.0 + (sigma - 1.0) * y(c)) * y_hat(c);
  const double norm = out.cwiseAbs().sum();
  if (!(norm > 0.0)) {
    throw DegenerateLabelError("debias_label: teacher output is entirely on the suppressed class");
  }
  return out / norm;
}

// The fake-label set M: R's features paired with labels of the given kind.
// For the debiased label the suppressed class is the one R is labeled with.
inline Batch build_memories(FakeLabelKind kind, const TeacherEnsemble& ensemble, const Batch& r,
                            const EwcConfig& cfg, std::uint64_t seed) {
  if (r.size() == 0) throw InvalidArgument("build_memories: empty target set");
  const Eigen::Index n = r.features.rows(), c = r.labels.cols();
  Batch m{r.features, Matrix(n, c)};
  switch (kind) {
    case FakeLabelKind::kUniform:
      m.labels.setConstant(1.0 / static_cast<double>(c));
      break;
    case FakeLabelKind::kRandom: {
      Rng rng(seed);
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < c; ++j) m.labels(i, j) = rng.uniform();
        const double s = m.labels.row(i).sum();
        if (s > 0.0) {
          m.labels.row(i) /= s;
        } else {
          m.labels.row(i).setConstant(1.0 / static_cast<double>(c));
        }
      }
      break;
    }
    case FakeLabelKind::kTeacher:
      m.labels = teacher_label(ensemble, r.features);
      break;
    case FakeLabelKind::kDebiasTeacher: {
      const Matrix y_hat = teacher_label(ensemble, r.features);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double sigma = cfg.sigma_mode == SigmaMode::kFixed
                                 ? cfg.sigma_fixed
                                 : dynamic_sigma(y_hat.row(i), argmax(r.labels.row(i)));
        m.labels.row(i) = debias_label(y_hat.row(i), r.labels.row(i), sigma);
      }
      break;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Knowledge preserver.

struct FisherDiagonal {
  ParamVector values;
  ParamVector anchor;
};

// Mean over rows of squared per-sample gradients at `anchor`, processed in
// chunks of `batch_size` rows.
inline FisherDiagonal fisher_diagonal(const ParamVector& anchor, const ModelSpec& spec, const Batch& data,
                                      std::size_t batch_size) {
  if (data.size() == 0) throw InvalidArgument("fisher_diagonal: empty data");
  if (batch_size == 0) throw InvalidArgument("fisher_diagonal: batch_size must be >= 1");
  ParamVector sum = anchor.like(0.0);
  const auto n = static_cast<Eigen::Index>(data.size());
  for (Eigen::Index at = 0; at < n; at += static_cast<Eigen::Index>(batch_size)) {
    const Eigen::Index len = std::min<Eigen::Index>(static_cast<Eigen::Index>(batch_size), n - at);
    sum.values() += squared_sample_grad_sum(anchor, spec, data.features.middleRows(at, len),
                                            data.labels.middleRows(at, len)).values();
  }
  sum.values() /= static_cast<double>(n);
  return {std::move(sum), anchor};
}

// (lambda/2) sum_i F_i (theta_i - anchor_i)^2 and its gradient.
inline LossGrad ewc_penalty(const ParamVector& theta, const FisherDiagonal& fisher, double lambda) {
  if (!theta.same_shape(fisher.anchor) || !theta.same_shape(fisher.values)) {
    throw DimensionError("ewc_penalty: theta/fisher shape mismatch");
  }
  const Vector diff = theta.values() - fisher.anchor.values();
  const Vector fd = fisher.values.values().cwiseProduct(diff);
  LossGrad out{0.5 * lambda * fd.dot(diff), theta.like(0.0)};
  out.grad.values() = lambda * fd;
  return out;
}

// L_M(theta) - L_R(theta) + ewc_penalty(theta). M and R must hold the same
// feature rows.
inline LossGrad unlearn_loss_grad(const ParamVector& theta, const ModelSpec& spec, const Batch& m,
                                  const Batch& r, const FisherDiagonal& fisher, double lambda) {
  if (m.features.rows() != r.features.rows() || m.features.cols() != r.features.cols()) {
    throw DimensionError("unlearn_loss_grad: M and R feature shapes differ");
  }
  auto term = [&](const char* name, auto&& fn) {
    try {
      return fn();
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string("unlearn_loss_grad: ") + name + " term: " + e.what());
    }
  };
  const auto lm = term("memory (L_M)", [&] { return loss_and_grad(theta, spec, m); });
  const auto lr = term("target (L_R)", [&] { return loss_and_grad(theta, spec, r); });
  const auto pen = ewc_penalty(theta, fisher, lambda);
  if (!std::isfinite(pen.loss) || !pen.grad.all_finite()) {
    throw DivergenceError("unlearn_loss_grad: penalty term is non-finite");
  }
  LossGrad out{lm.loss - lr.loss + pen.loss, lm.grad};
  out.grad.values() -= lr.grad.values();
  out.grad.values() += pen.grad.values();
  return out;
}

inline constexpr double kDivergenceLimit = 1e6;

namespace detail {

enum class UnlearnMode { kActiveForgetting, kConventional };

inline GlobalState continue_on_memories(const GlobalState& state, const ModelSpec& spec,
                                        const std::vector<Batch>& clients, const UnlearnRequest& req,
                                        FakeLabelKind kind, const EwcConfig& cfg, std::uint64_t seed,
                                        UnlearnMode mode, std::size_t epochs) {
  const std::size_t k = req.client_id;
  if (k >= clients.size() || k >= state.client_params.size()) {
    throw InvalidArgument("unlearn: client " + std::to_string(k) + " does not exist");
  }
  if (req.target_rows.empty()) throw InvalidArgument("unlearn: empty target set");
  if (epochs == 0) return state;

  const Batch r = gather(clients[k], req.target_rows);
  Batch m;
  {
    // Teachers are only needed to form M and are dropped at scope exit.
    const TeacherEnsemble teachers(spec, cfg.teacher_count, derive_seed(seed, {stream::kTeachers}));
    m = build_memories(kind, teachers, r, cfg, derive_seed(seed, {stream::kMemories}));
  }

  const ParamVector& anchor = state.client_params[k];
  FisherDiagonal fisher;
  if (mode == UnlearnMode::kActiveForgetting) fisher = fisher_diagonal(anchor, spec, clients[k], cfg.batch_size);

  ParamVector theta = anchor;
  Rng rng(derive_seed(seed, {stream::kUnlearn}));
  for (std::size_t e = 0; e < epochs; ++e) {
    const auto order = rng.permutation(r.size());
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - at);
      const std::span<const std::size_t> rows(order.data() + at, len);
      const Batch mb = gather(m, rows);
      LossGrad lg = mode == UnlearnMode::kActiveForgetting
                        ? unlearn_loss_grad(theta, spec, mb, gather(r, rows), fisher, cfg.lambda)
                        : loss_and_grad(theta, spec, mb);
      if (!std::isfinite(lg.loss) || std::abs(lg.loss) > kDivergenceLimit) {
        throw DivergenceError("unlearning diverged (loss " + std::to_string(lg.loss) +
                              "); reduce unlearn.learning_rate or raise unlearn.lambda");
      }
      theta.values() -= cfg.learning_rate * lg.grad.values();
    }
  }

  GlobalState out = state;
  out.client_params[k] = std::move(theta);
  out.global_params = aggregate(out.client_params, out.weights);
  return out;
}

}  // namespace detail

// Target client builds memories, anchors a Fisher penalty at its current
// params, trains on L_M - L_R + penalty, and the server re-averages all
// clients (the others unchanged).
inline GlobalState run_unlearn(const GlobalState& state, const ModelSpec& spec,
                               const std::vector<Batch>& clients, const UnlearnRequest& req,
                               FakeLabelKind kind, const EwcConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  return detail::continue_on_memories(state, spec, clients, req, kind, cfg, seed,
                                      detail::UnlearnMode::kActiveForgetting, cfg.ewc_epochs);
}

// Same epoch count allowed to be zero; used to check the no-op path.
inline GlobalState run_unlearn_epochs(const GlobalState& state, const ModelSpec& spec,
                                      const std::vector<Batch>& clients, const UnlearnRequest& req,
                                      FakeLabelKind kind, const EwcConfig& cfg, std::uint64_t seed,
                                      std::size_t epochs) {
  return detail::continue_on_memories(state, spec, clients, req, kind, cfg, seed,
                                      detail::UnlearnMode::kActiveForgetting, epochs);
}

// Continued training on L_M alone (no penalty, no target term), with the
// learning rate, batch size and epoch count taken from `cfg`.
inline GlobalState run_conventional(const GlobalState& state, const ModelSpec& spec,
                                    const std::vector<Batch>& clients, const UnlearnRequest& req,
                                    FakeLabelKind kind, const EwcConfig& cfg, std::uint64_t seed,
                                    std::size_t epochs) {
  return detail::continue_on_memories(state, spec, clients, req, kind, cfg, seed,
                                      detail::UnlearnMode::kConventional, epochs);
}

// Client data with the request's rows removed from the target client.
inline std::vector<Batch> remove_target(const std::vector<Batch>& clients, const UnlearnRequest& req) {
  if (req.client_id >= clients.size()) throw InvalidArgument("remove_target: no such client");
  std::vector<Batch> out = clients;
  const Batch& own = clients[req.client_id];
  std::vector<std::size_t> all(own.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto keep = set_difference(all, req.target_rows);
  if (keep.empty()) throw InvalidArgument("remove_target: client would be left with no data");
  out[req.client_id] = gather(own, keep);
  return out;
}

// Federated training from a fresh initialization without the target rows.
inline GlobalState run_retrain(const FederationConfig& config, const ModelSpec& spec,
                               const std::vector<Batch>& clients, const UnlearnRequest& req,
                               std::size_t jobs = 1) {
  return run_federated(config, spec, remove_target(clients, req), initial_params(spec, config.seed), {}, jobs);
}

}  // namespace fedaf
