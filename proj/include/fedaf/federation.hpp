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

// FedAvg simulation: every client trains locally each round and the server
// takes the data-size-weighted average.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fedaf/data.hpp"
#include "fedaf/error.hpp"
#include "fedaf/nn.hpp"
#include "fedaf/parallel.hpp"
#include "fedaf/rng.hpp"

namespace fedaf {

// Tags separating the RNG streams derived from one root seed.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kLocal = 2;
inline constexpr std::uint64_t kPartition = 3;
inline constexpr std::uint64_t kBackdoor = 4;
inline constexpr std::uint64_t kTeachers = 5;
inline constexpr std::uint64_t kMemories = 6;
inline constexpr std::uint64_t kUnlearn = 7;
inline constexpr std::uint64_t kOverlap = 8;
inline constexpr std::uint64_t kData = 9;
}  // namespace stream

struct FederationConfig {
  std::size_t client_count = 4;
  std::size_t local_epochs = 1;
  std::size_t rounds = 10;
  double learning_rate = 0.5;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const {
    if (client_count < 1) throw ConfigError("federation.client_count must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("federation.learning_rate must be > 0");
    }
    if (batch_size < 1) throw ConfigError("federation.batch_size must be >= 1");
  }

  friend bool operator==(const FederationConfig&, const FederationConfig&) = default;
};

struct GlobalState {
  std::size_t round = 0;
  ParamVector global_params;
  std::vector<ParamVector> client_params;
  std::vector<double> weights;
};

struct RoundMetrics {
  std::size_t round = 0;
  std::size_t client = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

using RoundHook = std::function<void(const RoundMetrics&)>;

inline std::vector<double> client_weights(const std::vector<std::size_t>& sizes) {
  if (sizes.empty()) throw InvalidArgument("client_weights: no clients");
  double total = 0.0;
  for (auto n : sizes) total += static_cast<double>(n);
  if (total <= 0.0) throw InvalidArgument("client_weights: all clients are empty");
  std::vector<double> w;
  for (auto n : sizes) w.push_back(static_cast<double>(n) / total);
  return w;
}

inline std::vector<double> client_weights(const ClientPartition& partition) {
  return client_weights(partition.sizes());
}

// `epochs` passes of mini-batch SGD over `data`, reshuffled every epoch from
// a stream seeded by `seed`. The last batch of an epoch may be short.
inline ParamVector local_train(ParamVector params, const ModelSpec& spec, const Batch& data,
                               std::size_t epochs, double lr, std::size_t batch_size,
                               std::uint64_t seed) {
  if (batch_size == 0) throw InvalidArgument("local_train: batch_size must be >= 1");
  if (epochs == 0) return params;
  if (data.size() == 0) throw InvalidArgument("local_train: empty client data");
  Rng rng(seed);
  std::vector<std::size_t> order(data.size());
  for (std::size_t e = 0; e < epochs; ++e) {
    order = rng.permutation(data.size());
    for (std::size_t at = 0; at < order.size(); at += batch_size) {
      const std::size_t len = std::min(batch_size, order.size() - at);
      const std::span<const std::size_t> rows(order.data() + at, len);
      const Matrix x = gather_rows(data.features, rows);
      const Matrix y = gather_rows(data.labels, rows);
      const auto lg = loss_and_grad(params, spec, x, y);
      params.values() -= lr * lg.grad.values();
    }
  }
  return params;
}

// sum_k w_k * theta_k, accumulated in client order.
inline ParamVector aggregate(const std::vector<ParamVector>& client_params,
                             const std::vector<double>& weights) {
  if (client_params.empty()) throw InvalidArgument("aggregate: no client params");
  if (client_params.size() != weights.size()) {
    throw DimensionError("aggregate: " + std::to_string(client_params.size()) + " params vs " +
                         std::to_string(weights.size()) + " weights");
  }
  double sum = 0.0;
  for (double w : weights) sum += w;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw InvalidArgument("aggregate: weights sum to " + std::to_string(sum));
  }
  for (std::size_t k = 1; k < client_params.size(); ++k) {
    if (!client_params[k].same_shape(client_params[0])) {
      throw DimensionError("aggregate: client " + std::to_string(k) + " has a different shape");
    }
  }
  ParamVector out = client_params[0];
  out.values() *= weights[0];
  for (std::size_t k = 1; k < client_params.size(); ++k) {
    out.values() += weights[k] * client_params[k].values();
  }
  return out;
}

// Client-local training sets in partition order.
inline std::vector<Batch> client_batches(const Dataset& data, const ClientPartition& partition) {
  std::vector<Batch> out;
  for (const auto& idx : partition.assignments) out.push_back(gather(data.batch(), idx));
  return out;
}

inline ParamVector initial_params(const ModelSpec& spec, std::uint64_t seed) {
  return xavier_init(spec, derive_seed(seed, {stream::kInit}));
}

// `config.rounds` rounds of broadcast / local training / aggregation,
// starting from `start`. Client k in round t trains with the stream
// derive_seed(seed, {kLocal, k, t}). On return every client holds the final
// global parameters.
inline GlobalState run_federated(const FederationConfig& config, const ModelSpec& spec,
                                 const std::vector<Batch>& clients, ParamVector start,
                                 const RoundHook& hook = {}, std::size_t jobs = 1) {
  config.validate();
  if (clients.size() != config.client_count) {
    throw ConfigError("run_federated: " + std::to_string(clients.size()) +
                      " client datasets for client_count " + std::to_string(config.client_count));
  }
  std::vector<std::size_t> sizes;
  for (const auto& c : clients) sizes.push_back(c.size());
  GlobalState state;
  state.weights = client_weights(sizes);
  state.global_params = std::move(start);
  std::vector<ParamVector> local(clients.size());
  for (std::size_t t = 0; t < config.rounds; ++t) {
    parallel_for(clients.size(), jobs, [&](std::size_t k) {
      local[k] = local_train(state.global_params, spec, clients[k], config.local_epochs,
                             config.learning_rate, config.batch_size,
                             derive_seed(config.seed, {stream::kLocal, k, t}));
    });
    if (hook) {
      for (std::size_t k = 0; k < clients.size(); ++k) {
        const auto lg = loss_and_grad(local[k], spec, clients[k]);
        hook({t, k, lg.loss, accuracy(local[k], spec, clients[k])});
      }
    }
    state.global_params = aggregate(local, state.weights);
    state.round = t + 1;
  }
  state.client_params.assign(clients.size(), state.global_params);
  return state;
}

inline GlobalState run_federated(const FederationConfig& config, const ModelSpec& spec,
                                 const ClientPartition& partition, const Dataset& data,
                                 const RoundHook& hook = {}, std::size_t jobs = 1) {
  partition.validate(data.size());
  return run_federated(config, spec, client_batches(data, partition),
                       initial_params(spec, config.seed), hook, jobs);
}

}  // namespace fedaf
