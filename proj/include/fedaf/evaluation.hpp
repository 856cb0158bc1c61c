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

// Experiment protocols and metrics: the backdoor pipeline that compares
// unlearning arms, the overlap check for fake-label kinds, hyper-parameter
// sweeps, and CSV/JSON output.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "fedaf/data.hpp"
#include "fedaf/error.hpp"
#include "fedaf/federation.hpp"
#include "fedaf/nn.hpp"
#include "fedaf/parallel.hpp"
#include "fedaf/unlearning.hpp"

namespace fedaf {

// ---------------------------------------------------------------------------
// Metrics.

inline double backdoor_accuracy(const ParamVector& params, const ModelSpec& spec, const Batch& poisoned) {
  if (poisoned.size() == 0) throw InvalidArgument("backdoor_accuracy: empty batch");
  return accuracy(params, spec, poisoned);
}

// Accuracy restricted to each class of `data`; 0 for classes with no rows.
inline std::vector<double> per_class_accuracy(const ParamVector& params, const ModelSpec& spec,
                                              const Dataset& data) {
  const auto pred = predict(params, spec, data.features());
  std::vector<double> hits(data.class_count(), 0.0);
  const auto counts = data.class_counts();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (pred[i] == data.label(i)) hits[data.label(i)] += 1.0;
  }
  for (std::size_t c = 0; c < hits.size(); ++c) hits[c] = counts[c] ? hits[c] / static_cast<double>(counts[c]) : 0.0;
  return hits;
}

// Accuracy on the rows of `data` whose class is (or is not) `class_id`.
inline double class_subset_accuracy(const ParamVector& params, const ModelSpec& spec, const Dataset& data,
                                    std::size_t class_id, bool in_class) {
  const auto pred = predict(params, spec, data.features());
  std::size_t n = 0, hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if ((data.label(i) == class_id) != in_class) continue;
    ++n;
    if (pred[i] == data.label(i)) ++hits;
  }
  return n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0;
}

template <typename T>
struct Timed {
  T value;
  double seconds;
};

// Runs `fn` and measures its wall time on a monotonic clock.
template <typename Fn>
auto timed(Fn&& fn) {
  const auto start = std::chrono::steady_clock::now();
  auto value = fn();
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  return Timed<decltype(value)>{std::move(value), elapsed.count()};
}

// ---------------------------------------------------------------------------
// Protocol.

enum class Arm { kFedAF, kFedAFC, kRetrain };

inline std::string_view to_string(Arm a) {
  switch (a) {
    case Arm::kFedAF: return "fedaf";
    case Arm::kFedAFC: return "fedaf-c";
    case Arm::kRetrain: return "retrain";
  }
  return "?";
}

inline Arm parse_arm(std::string_view s) {
  if (s == "fedaf") return Arm::kFedAF;
  if (s == "fedaf-c") return Arm::kFedAFC;
  if (s == "retrain") return Arm::kRetrain;
  throw InvalidArgument("unknown arm '" + std::string(s) + "'");
}

// Everything an experiment needs besides the data and the seed.
struct Protocol {
  ModelSpec spec{{784, 128, 10}};
  FederationConfig federation;
  EwcConfig unlearn;
  FakeLabelKind label_kind = FakeLabelKind::kDebiasTeacher;
  std::size_t target_client = 0;
  double poison_fraction = 1.0;
  std::size_t trigger_size = 3;
  double trigger_value = 1.0;
  std::size_t image_side = 28;  // features are read as image_side^2 row-major pixels

  void validate(const Dataset& train) const {
    federation.validate();
    unlearn.validate();
    if (spec.input_dim() != train.feature_dim()) throw ConfigError("model.layer_dims[0] must equal the feature dim");
    if (spec.class_count() != train.class_count()) throw ConfigError("model.layer_dims[-1] must equal the class count");
    if (target_client >= federation.client_count) throw ConfigError("backdoor.target_client out of range");
    if (image_side * image_side != train.feature_dim()) throw ConfigError("backdoor.image_side^2 must equal the feature dim");
    if (trigger_size < 1 || trigger_size > image_side) throw ConfigError("backdoor.trigger_size out of range");
  }
};

inline std::uint64_t experiment_seed(std::uint64_t root, std::size_t trial, std::size_t class_id) {
  return derive_seed(root, {trial, class_id});
}

// A trained, backdoored federation ready for an unlearning request.
struct Experiment {
  std::uint64_t seed = 0;
  std::size_t class_id = 0;
  std::size_t flip_class = 0;
  std::vector<Batch> clients;  // as held by the clients, i.e. with the poisoned target
  UnlearnRequest request;
  Batch poisoned_target;       // triggered rows of the target, flipped labels
  FederationConfig federation; // with the experiment's training seed
  GlobalState trained;
  double train_seconds = 0.0;
};

// Partition, poison client `protocol.target_client`'s rows of `class_id`,
// and train the federation.
inline Experiment prepare_experiment(const Protocol& protocol, const Dataset& train, std::uint64_t seed,
                                     std::size_t class_id, std::size_t jobs = 1) {
  protocol.validate(train);
  Experiment ex;
  ex.seed = seed;
  ex.class_id = class_id;
  const std::size_t k = protocol.target_client;
  const auto partition = partition_iid(train, protocol.federation.client_count, derive_seed(seed, {stream::kPartition}));
  const auto& own = partition.assignments[k];
  const IndexSet targets = select_class(train, class_id, own);
  if (targets.empty()) throw InvalidArgument("class " + std::to_string(class_id) + " is absent from the target client");

  const auto backdoor = make_corner_backdoor(protocol.image_side, protocol.trigger_size, train.class_count(),
                                             derive_seed(seed, {stream::kBackdoor, 0}), protocol.poison_fraction,
                                             protocol.trigger_value);
  ex.flip_class = backdoor.flip(class_id);
  const std::uint64_t poison_seed = derive_seed(seed, {stream::kBackdoor, 1});
  const Dataset poisoned = inject_backdoor(train, targets, backdoor, poison_seed);
  const IndexSet poisoned_global = poisoned_rows(targets, protocol.poison_fraction, poison_seed);

  ex.clients = client_batches(poisoned, partition);
  // Client-local positions of the target and poisoned rows (own is sorted).
  auto local = [&](const IndexSet& global) {
    IndexSet out;
    for (std::size_t g : global) {
      out.push_back(static_cast<std::size_t>(std::lower_bound(own.begin(), own.end(), g) - own.begin()));
    }
    return out;
  };
  ex.request = {k, class_id, local(targets)};
  ex.poisoned_target = gather(ex.clients[k], local(poisoned_global));

  ex.federation = protocol.federation;
  ex.federation.seed = derive_seed(seed, {stream::kData});
  auto run = timed([&] {
    return run_federated(ex.federation, protocol.spec, ex.clients, initial_params(protocol.spec, ex.federation.seed),
                         {}, jobs);
  });
  ex.trained = std::move(run.value);
  ex.train_seconds = run.seconds;
  return ex;
}

struct MetricsRecord {
  std::string arm;
  std::uint64_t seed = 0;
  std::size_t trial = 0;
  std::size_t class_id = 0;
  double bd_acc_before = 0.0;
  double bd_acc_after = 0.0;
  double test_acc_before = 0.0;
  double test_acc_after = 0.0;
  std::vector<double> per_class_acc;  // after the arm ran
  double wall_time_s = 0.0;
  GlobalState state;                  // not serialized
};

inline std::uint64_t arm_seed(std::uint64_t experiment, Arm arm) {
  return derive_seed(experiment, {stream::kUnlearn, static_cast<std::uint64_t>(arm)});
}

// Applies one arm to a prepared experiment and scores it on `test`.
inline MetricsRecord run_arm(const Protocol& protocol, const Experiment& ex, Arm arm, const Dataset& test,
                             const EwcConfig& unlearn) {
  const auto& spec = protocol.spec;
  const std::uint64_t seed = arm_seed(ex.seed, arm);
  auto result = timed([&] {
    switch (arm) {
      case Arm::kFedAF:
        return run_unlearn(ex.trained, spec, ex.clients, ex.request, protocol.label_kind, unlearn, seed);
      case Arm::kFedAFC:
        return run_conventional(ex.trained, spec, ex.clients, ex.request, protocol.label_kind, unlearn, seed,
                                unlearn.ewc_epochs);
      case Arm::kRetrain:
        break;
    }
    return run_retrain(ex.federation, spec, ex.clients, ex.request);
  });
  MetricsRecord rec;
  rec.arm = std::string(to_string(arm));
  rec.seed = ex.seed;
  rec.class_id = ex.class_id;
  rec.bd_acc_before = backdoor_accuracy(ex.trained.global_params, spec, ex.poisoned_target);
  rec.bd_acc_after = backdoor_accuracy(result.value.global_params, spec, ex.poisoned_target);
  rec.test_acc_before = accuracy(ex.trained.global_params, spec, test.batch());
  rec.test_acc_after = accuracy(result.value.global_params, spec, test.batch());
  rec.per_class_acc = per_class_accuracy(result.value.global_params, spec, test);
  rec.wall_time_s = result.seconds;
  rec.state = std::move(result.value);
  return rec;
}

inline MetricsRecord run_arm(const Protocol& protocol, const Experiment& ex, Arm arm, const Dataset& test) {
  return run_arm(protocol, ex, arm, test, protocol.unlearn);
}

// Every (trial, class) experiment with every arm; records ordered by trial,
// class, then arm as given. Experiments run in parallel up to `jobs`.
inline std::vector<MetricsRecord> run_pipeline(const Protocol& protocol, const Dataset& train, const Dataset& test,
                                               std::uint64_t root_seed, std::size_t trials,
                                               const std::vector<std::size_t>& classes,
                                               const std::vector<Arm>& arms, std::size_t jobs = 1) {
  if (trials < 1) throw ConfigError("trials must be >= 1");
  const std::size_t n = trials * classes.size();
  std::vector<std::vector<MetricsRecord>> out(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    const std::size_t trial = i / classes.size(), c = classes[i % classes.size()];
    const auto ex = prepare_experiment(protocol, train, experiment_seed(root_seed, trial, c), c);
    for (Arm arm : arms) {
      out[i].push_back(run_arm(protocol, ex, arm, test));
      out[i].back().trial = trial;
    }
  });
  std::vector<MetricsRecord> flat;
  for (auto& v : out) {
    for (auto& r : v) flat.push_back(std::move(r));
  }
  return flat;
}

// ---------------------------------------------------------------------------
// Overlap validation: can one model fit both the kept data and the fake
// labels at once?

struct OverlapRecord {
  std::string kind;
  std::uint64_t seed = 0;
  std::size_t class_id = 0;
  double target_acc = 0.0;      // on held-out rows of the class, lower is better
  double non_target_acc = 0.0;  // on held-out rows of other classes
};

// Trains from scratch for rounds * local_epochs epochs on the client data
// with `target_class` rows relabeled by `kind`, then scores on `test`.
inline OverlapRecord overlap_validation(const Protocol& protocol, const Dataset& client_data, const Dataset& test,
                                        std::size_t target_class, FakeLabelKind kind, std::uint64_t seed) {
  const auto& spec = protocol.spec;
  const IndexSet target = select_class(client_data, target_class);
  if (target.empty()) throw InvalidArgument("overlap_validation: class absent from client data");
  std::vector<std::size_t> all(client_data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const IndexSet keep = set_difference(all, target);

  const Batch r = gather(client_data.batch(), target);
  const TeacherEnsemble teachers(spec, protocol.unlearn.teacher_count, derive_seed(seed, {stream::kTeachers}));
  const Batch m = build_memories(kind, teachers, r, protocol.unlearn, derive_seed(seed, {stream::kMemories}));

  Batch mix = gather(client_data.batch(), keep);
  const Eigen::Index kept = mix.features.rows();
  mix.features.conservativeResize(kept + m.features.rows(), Eigen::NoChange);
  mix.labels.conservativeResize(kept + m.labels.rows(), Eigen::NoChange);
  mix.features.bottomRows(m.features.rows()) = m.features;
  mix.labels.bottomRows(m.labels.rows()) = m.labels;

  const auto& fed = protocol.federation;
  const ParamVector params = local_train(xavier_init(spec, derive_seed(seed, {stream::kInit})), spec, mix,
                                         fed.rounds * fed.local_epochs, fed.learning_rate, fed.batch_size,
                                         derive_seed(seed, {stream::kOverlap}));
  OverlapRecord rec;
  rec.kind = std::string(to_string(kind));
  rec.seed = seed;
  rec.class_id = target_class;
  rec.target_acc = class_subset_accuracy(params, spec, test, target_class, true);
  rec.non_target_acc = class_subset_accuracy(params, spec, test, target_class, false);
  return rec;
}

// Overlap validation for each class on the target client's share of `train`.
inline std::vector<OverlapRecord> run_overlap(const Protocol& protocol, const Dataset& train, const Dataset& test,
                                              FakeLabelKind kind, std::uint64_t root_seed,
                                              const std::vector<std::size_t>& classes, std::size_t jobs = 1) {
  protocol.validate(train);
  const auto partition = partition_iid(train, protocol.federation.client_count,
                                       derive_seed(root_seed, {stream::kPartition}));
  const Dataset own = train.subset(partition.assignments[protocol.target_client]);
  std::vector<OverlapRecord> out(classes.size());
  parallel_for(classes.size(), jobs, [&](std::size_t i) {
    out[i] = overlap_validation(protocol, own, test, classes[i], kind,
                                derive_seed(root_seed, {stream::kOverlap, classes[i]}));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Sweeps.

struct SweepSpec {
  std::string param;  // "lambda" or "ewc_epochs"
  std::vector<double> values;
  std::size_t trials = 1;

  void validate() const {
    if (param != "lambda" && param != "ewc_epochs") throw ConfigError("sweep param must be lambda or ewc_epochs");
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    if (trials < 1) throw ConfigError("sweep trials must be >= 1");
    for (double v : values) {
      if (param == "ewc_epochs" && (v < 1 || v != std::floor(v))) {
        throw ConfigError("ewc_epochs sweep values must be positive integers");
      }
      if (param == "lambda" && !(v >= 0.0)) throw ConfigError("lambda sweep values must be >= 0");
    }
  }
};

inline EwcConfig with_sweep_value(EwcConfig cfg, const std::string& param, double value) {
  if (param == "lambda") {
    cfg.lambda = value;
  } else if (param == "ewc_epochs") {
    cfg.ewc_epochs = static_cast<std::size_t>(value);
  } else {
    throw ConfigError("unknown sweep param '" + param + "'");
  }
  cfg.validate();
  return cfg;
}

// One FedAF run of a prepared experiment under a swept setting.
struct SweepPoint {
  std::size_t value_index = 0;
  std::size_t class_id = 0;
  double target_acc = 0.0;      // backdoor accuracy on the poisoned target
  double non_target_acc = 0.0;  // test accuracy on classes other than the target
  double test_acc = 0.0;
  double wall_time_s = 0.0;
};

inline SweepPoint sweep_point(const Protocol& protocol, const Experiment& ex, const Dataset& test,
                              const EwcConfig& cfg, std::size_t value_index) {
  const auto rec = run_arm(protocol, ex, Arm::kFedAF, test, cfg);
  return {value_index, ex.class_id, rec.bd_acc_after,
          class_subset_accuracy(rec.state.global_params, protocol.spec, test, ex.class_id, false),
          rec.test_acc_after, rec.wall_time_s};
}

// Trial-level sweep summary: metrics averaged over the swept classes.
struct SweepRecord {
  std::string param;
  double value = 0.0;
  std::size_t trial = 0;
  std::uint64_t seed = 0;  // root seed; experiments use experiment_seed(seed, trial, class)
  std::size_t classes = 0;
  double target_acc = 0.0;
  double non_target_acc = 0.0;
  double test_acc = 0.0;
  double wall_time_s = 0.0;
};

inline std::vector<SweepRecord> summarize_sweep(const SweepSpec& sweep, std::uint64_t root_seed, std::size_t trial,
                                                const std::vector<SweepPoint>& points) {
  std::vector<SweepRecord> out;
  for (std::size_t v = 0; v < sweep.values.size(); ++v) {
    SweepRecord rec{sweep.param, sweep.values[v], trial, root_seed};
    for (const auto& p : points) {
      if (p.value_index != v) continue;
      ++rec.classes;
      rec.target_acc += p.target_acc;
      rec.non_target_acc += p.non_target_acc;
      rec.test_acc += p.test_acc;
      rec.wall_time_s += p.wall_time_s;
    }
    if (rec.classes) {
      const auto n = static_cast<double>(rec.classes);
      rec.target_acc /= n;
      rec.non_target_acc /= n;
      rec.test_acc /= n;
    }
    out.push_back(rec);
  }
  return out;
}

// For each trial and class, trains once and runs FedAF under every value.
// Returns one record per (value, trial), ordered by trial then value.
inline std::vector<SweepRecord> sweep(const Protocol& protocol, const SweepSpec& spec, const Dataset& train,
                                      const Dataset& test, std::uint64_t root_seed,
                                      const std::vector<std::size_t>& classes, std::size_t jobs = 1) {
  spec.validate();
  std::vector<EwcConfig> cfgs;
  for (double v : spec.values) cfgs.push_back(with_sweep_value(protocol.unlearn, spec.param, v));
  const std::size_t n = spec.trials * classes.size();
  std::vector<std::vector<SweepPoint>> points(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    const std::size_t trial = i / classes.size(), c = classes[i % classes.size()];
    const auto ex = prepare_experiment(protocol, train, experiment_seed(root_seed, trial, c), c);
    for (std::size_t v = 0; v < cfgs.size(); ++v) points[i].push_back(sweep_point(protocol, ex, test, cfgs[v], v));
  });
  std::vector<SweepRecord> out;
  for (std::size_t t = 0; t < spec.trials; ++t) {
    std::vector<SweepPoint> trial_points;
    for (std::size_t j = 0; j < classes.size(); ++j) {
      const auto& p = points[t * classes.size() + j];
      trial_points.insert(trial_points.end(), p.begin(), p.end());
    }
    for (auto& r : summarize_sweep(spec, root_seed, t, trial_points)) out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output.

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace detail

inline constexpr std::string_view kMetricsCsvHeader =
    "arm,seed,class_id,bd_acc_before,bd_acc_after,test_acc_before,test_acc_after,wall_time_s";
inline constexpr std::string_view kSweepCsvHeader =
    "param,value,trial,seed,classes,target_acc,non_target_acc,test_acc,wall_time_s";
inline constexpr std::string_view kOverlapCsvHeader = "kind,seed,class_id,target_acc,non_target_acc";
inline constexpr std::string_view kRoundsCsvHeader = "round,client,loss,acc";

inline void write_metrics_csv(std::ostream& out, const std::vector<MetricsRecord>& records) {
  using detail::fmt_double;
  out << kMetricsCsvHeader << '\n';
  for (const auto& r : records) {
    out << r.arm << ',' << r.seed << ',' << r.class_id << ',' << fmt_double(r.bd_acc_before) << ','
        << fmt_double(r.bd_acc_after) << ',' << fmt_double(r.test_acc_before) << ','
        << fmt_double(r.test_acc_after) << ',' << fmt_double(r.wall_time_s) << '\n';
  }
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRecord>& records) {
  using detail::fmt_double;
  out << kSweepCsvHeader << '\n';
  for (const auto& r : records) {
    out << r.param << ',' << fmt_double(r.value) << ',' << r.trial << ',' << r.seed << ',' << r.classes << ','
        << fmt_double(r.target_acc) << ',' << fmt_double(r.non_target_acc) << ',' << fmt_double(r.test_acc)
        << ',' << fmt_double(r.wall_time_s) << '\n';
  }
}

inline void write_overlap_csv(std::ostream& out, const std::vector<OverlapRecord>& records) {
  using detail::fmt_double;
  out << kOverlapCsvHeader << '\n';
  for (const auto& r : records) {
    out << r.kind << ',' << r.seed << ',' << r.class_id << ',' << fmt_double(r.target_acc) << ','
        << fmt_double(r.non_target_acc) << '\n';
  }
}

inline nlohmann::json metrics_json(const std::vector<MetricsRecord>& records, const nlohmann::json& config) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : records) {
    rows.push_back({{"arm", r.arm}, {"seed", r.seed}, {"trial", r.trial}, {"class_id", r.class_id},
                    {"bd_acc_before", r.bd_acc_before}, {"bd_acc_after", r.bd_acc_after},
                    {"test_acc_before", r.test_acc_before}, {"test_acc_after", r.test_acc_after},
                    {"per_class_acc", r.per_class_acc}, {"wall_time_s", r.wall_time_s}});
  }
  return {{"config", config}, {"records", rows}};
}

inline nlohmann::json sweep_json(const std::vector<SweepRecord>& records, const nlohmann::json& config) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : records) {
    rows.push_back({{"param", r.param}, {"value", r.value}, {"trial", r.trial}, {"seed", r.seed},
                    {"classes", r.classes}, {"target_acc", r.target_acc}, {"non_target_acc", r.non_target_acc},
                    {"test_acc", r.test_acc}, {"wall_time_s", r.wall_time_s}});
  }
  return {{"config", config}, {"records", rows}};
}

inline nlohmann::json overlap_json(const std::vector<OverlapRecord>& records, const nlohmann::json& config) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : records) {
    rows.push_back({{"kind", r.kind}, {"seed", r.seed}, {"class_id", r.class_id}, {"target_acc", r.target_acc},
                    {"non_target_acc", r.non_target_acc}});
  }
  return {{"config", config}, {"records", rows}};
}

// Mean and sample standard deviation (0 for fewer than two values).
struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd out;
  out.n = v.size();
  if (v.empty()) return out;
  for (double x : v) out.mean += x;
  out.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return out;
}

}  // namespace fedaf
