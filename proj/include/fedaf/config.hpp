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

// Experiment configuration: a strict JSON schema (unknown keys are errors),
// defaults for every optional field, and a lossless serializer.
//
// Schema (all keys except "dataset" optional; defaults shown):
//
//   {
//     "dataset": {"kind": "mnist", "path": "<dir with the four IDX files>"}
//              | {"kind": "blobs", "classes": 4, "per_class": 200,
//                 "test_per_class": 50, "dim": 16, "spread": 0.1},
//     "seed": 0, "trials": 1, "output_dir": "",
//     "label_kind": "debias",            // uniform | random | teacher | debias
//     "classes": [],                     // target classes; empty = all
//     "model": {"hidden_dims": [128]},
//     "federation": {"client_count": 4, "local_epochs": 1, "rounds": 10,
//                    "learning_rate": 0.5, "batch_size": 32},
//     "backdoor": {"target_client": 0, "poison_fraction": 1.0,
//                  "trigger_size": 3, "trigger_value": 1.0,
//                  "image_side": 0},     // 0 = sqrt(feature dim)
//     "unlearn": {"lambda": 10, "ewc_epochs": 1, "learning_rate": 0.14,
//                 "batch_size": 128, "sigma_mode": "dynamic",
//                 "sigma_fixed": 1.0, "teacher_count": 10},
//     "sweep": {"param": "lambda", "values": [0.1, 0.5, 1, 10, 50],
//               "trials": 0}             // 0 = use "trials"
//   }
//
// A relative dataset path is resolved against the config file's directory.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedaf/data.hpp"
#include "fedaf/error.hpp"
#include "fedaf/evaluation.hpp"
#include "fedaf/federation.hpp"
#include "fedaf/unlearning.hpp"

namespace fedaf {

struct DatasetConfig {
  std::string kind = "mnist";
  std::string path;
  std::size_t classes = 4;
  std::size_t per_class = 200;
  std::size_t test_per_class = 50;
  std::size_t dim = 16;
  double spread = 0.1;

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct BackdoorConfig {
  std::size_t target_client = 0;
  double poison_fraction = 1.0;
  std::size_t trigger_size = 3;
  double trigger_value = 1.0;
  std::size_t image_side = 0;

  friend bool operator==(const BackdoorConfig&, const BackdoorConfig&) = default;
};

struct SweepConfig {
  std::string param = "lambda";
  std::vector<double> values{0.1, 0.5, 1.0, 10.0, 50.0};
  std::size_t trials = 0;

  friend bool operator==(const SweepConfig&, const SweepConfig&) = default;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  std::uint64_t seed = 0;
  std::size_t trials = 1;
  std::string output_dir;
  FakeLabelKind label_kind = FakeLabelKind::kDebiasTeacher;
  std::vector<std::size_t> classes;
  std::vector<std::size_t> hidden_dims{128};
  FederationConfig federation;  // .seed is unused here; experiments derive their own
  BackdoorConfig backdoor;
  EwcConfig unlearn;
  SweepConfig sweep;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

namespace detail {

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported with their full path.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const nlohmann::json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    out = convert<T>(raw(key), child(key));
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + child(key) + "'");
    }
  }

  template <typename T>
  static T convert(const nlohmann::json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
        throw ConfigError(path + ": expected a non-negative integer");
      }
      return static_cast<T>(v.get<std::uint64_t>());
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path + ": expected a number");
      return v.get<double>();
    } else {
      if (!v.is_array()) throw ConfigError(path + ": expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], path + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::string sigma_mode_name(SigmaMode m) { return m == SigmaMode::kFixed ? "fixed" : "dynamic"; }

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
  if (c.dataset.kind != "mnist" && c.dataset.kind != "blobs") {
    throw ConfigError("dataset.kind must be 'mnist' or 'blobs'");
  }
  if (c.dataset.kind == "mnist" && c.dataset.path.empty()) throw ConfigError("dataset.path is required for mnist");
  if (c.dataset.kind == "blobs") {
    if (c.dataset.classes < 2) throw ConfigError("dataset.classes must be >= 2");
    if (c.dataset.per_class < 1 || c.dataset.test_per_class < 1) throw ConfigError("dataset.per_class must be >= 1");
    if (c.dataset.dim < 1) throw ConfigError("dataset.dim must be >= 1");
    if (!(c.dataset.spread >= 0.0)) throw ConfigError("dataset.spread must be >= 0");
  }
  if (c.trials < 1) throw ConfigError("trials must be >= 1");
  for (auto h : c.hidden_dims) {
    if (h < 1) throw ConfigError("model.hidden_dims entries must be >= 1");
  }
  c.federation.validate();
  c.unlearn.validate();
  if (c.backdoor.target_client >= c.federation.client_count) throw ConfigError("backdoor.target_client out of range");
  if (!(c.backdoor.poison_fraction > 0.0 && c.backdoor.poison_fraction <= 1.0)) {
    throw ConfigError("backdoor.poison_fraction must be in (0,1]");
  }
  if (!(c.backdoor.trigger_value >= 0.0 && c.backdoor.trigger_value <= 1.0)) {
    throw ConfigError("backdoor.trigger_value must be in [0,1]");
  }
  if (c.backdoor.trigger_size < 1) throw ConfigError("backdoor.trigger_size must be >= 1");
  SweepSpec{c.sweep.param, c.sweep.values, 1}.validate();
}

inline ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  ExperimentConfig c;
  detail::ObjectReader root(j, "");
  if (!root.has("dataset")) throw ConfigError("missing required key 'dataset'");
  {
    detail::ObjectReader d(root.raw("dataset"), "dataset");
    d.read("kind", c.dataset.kind);
    d.read("path", c.dataset.path);
    d.read("classes", c.dataset.classes);
    d.read("per_class", c.dataset.per_class);
    d.read("test_per_class", c.dataset.test_per_class);
    d.read("dim", c.dataset.dim);
    d.read("spread", c.dataset.spread);
    d.finish();
    if (!c.dataset.path.empty() && !base_dir.empty() && std::filesystem::path(c.dataset.path).is_relative()) {
      c.dataset.path = (base_dir / c.dataset.path).lexically_normal().string();
    }
  }
  root.read("seed", c.seed);
  root.read("trials", c.trials);
  root.read("output_dir", c.output_dir);
  if (root.has("label_kind")) {
    const auto s = detail::ObjectReader::convert<std::string>(root.raw("label_kind"), "label_kind");
    try {
      c.label_kind = parse_label_kind(s);
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("label_kind: ") + e.what());
    }
  }
  root.read("classes", c.classes);
  if (root.has("model")) {
    detail::ObjectReader m(root.raw("model"), "model");
    m.read("hidden_dims", c.hidden_dims);
    m.finish();
  }
  if (root.has("federation")) {
    detail::ObjectReader f(root.raw("federation"), "federation");
    f.read("client_count", c.federation.client_count);
    f.read("local_epochs", c.federation.local_epochs);
    f.read("rounds", c.federation.rounds);
    f.read("learning_rate", c.federation.learning_rate);
    f.read("batch_size", c.federation.batch_size);
    f.finish();
  }
  if (root.has("backdoor")) {
    detail::ObjectReader b(root.raw("backdoor"), "backdoor");
    b.read("target_client", c.backdoor.target_client);
    b.read("poison_fraction", c.backdoor.poison_fraction);
    b.read("trigger_size", c.backdoor.trigger_size);
    b.read("trigger_value", c.backdoor.trigger_value);
    b.read("image_side", c.backdoor.image_side);
    b.finish();
  }
  if (root.has("unlearn")) {
    detail::ObjectReader u(root.raw("unlearn"), "unlearn");
    u.read("lambda", c.unlearn.lambda);
    u.read("ewc_epochs", c.unlearn.ewc_epochs);
    u.read("learning_rate", c.unlearn.learning_rate);
    u.read("batch_size", c.unlearn.batch_size);
    if (u.has("sigma_mode")) {
      const auto s = detail::ObjectReader::convert<std::string>(u.raw("sigma_mode"), "unlearn.sigma_mode");
      if (s == "dynamic") {
        c.unlearn.sigma_mode = SigmaMode::kDynamic;
      } else if (s == "fixed") {
        c.unlearn.sigma_mode = SigmaMode::kFixed;
      } else {
        throw ConfigError("unlearn.sigma_mode must be 'dynamic' or 'fixed'");
      }
    }
    u.read("sigma_fixed", c.unlearn.sigma_fixed);
    u.read("teacher_count", c.unlearn.teacher_count);
    u.finish();
  }
  if (root.has("sweep")) {
    detail::ObjectReader s(root.raw("sweep"), "sweep");
    s.read("param", c.sweep.param);
    s.read("values", c.sweep.values);
    s.read("trials", c.sweep.trials);
    s.finish();
  }
  root.finish();
  validate(c);
  return c;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_config(j, std::filesystem::path(path).parent_path());
}

// Full resolved config, every field present.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json dataset = {{"kind", c.dataset.kind}};
  if (c.dataset.kind == "mnist") {
    dataset["path"] = c.dataset.path;
  } else {
    dataset.update({{"classes", c.dataset.classes}, {"per_class", c.dataset.per_class},
                    {"test_per_class", c.dataset.test_per_class}, {"dim", c.dataset.dim},
                    {"spread", c.dataset.spread}});
    if (!c.dataset.path.empty()) dataset["path"] = c.dataset.path;
  }
  return {
      {"dataset", dataset},
      {"seed", c.seed},
      {"trials", c.trials},
      {"output_dir", c.output_dir},
      {"label_kind", std::string(to_string(c.label_kind))},
      {"classes", c.classes},
      {"model", {{"hidden_dims", c.hidden_dims}}},
      {"federation",
       {{"client_count", c.federation.client_count}, {"local_epochs", c.federation.local_epochs},
        {"rounds", c.federation.rounds}, {"learning_rate", c.federation.learning_rate},
        {"batch_size", c.federation.batch_size}}},
      {"backdoor",
       {{"target_client", c.backdoor.target_client}, {"poison_fraction", c.backdoor.poison_fraction},
        {"trigger_size", c.backdoor.trigger_size}, {"trigger_value", c.backdoor.trigger_value},
        {"image_side", c.backdoor.image_side}}},
      {"unlearn",
       {{"lambda", c.unlearn.lambda}, {"ewc_epochs", c.unlearn.ewc_epochs},
        {"learning_rate", c.unlearn.learning_rate}, {"batch_size", c.unlearn.batch_size},
        {"sigma_mode", detail::sigma_mode_name(c.unlearn.sigma_mode)}, {"sigma_fixed", c.unlearn.sigma_fixed},
        {"teacher_count", c.unlearn.teacher_count}}},
      {"sweep", {{"param", c.sweep.param}, {"values", c.sweep.values}, {"trials", c.sweep.trials}}},
  };
}

inline std::string serialize(const ExperimentConfig& c) { return to_json(c).dump(2); }

struct Datasets {
  Dataset train;
  Dataset test;
};

inline Datasets load_datasets(const ExperimentConfig& c) {
  if (c.dataset.kind == "mnist") {
    const std::filesystem::path dir(c.dataset.path);
    return {load_idx((dir / "train-images-idx3-ubyte").string(), (dir / "train-labels-idx1-ubyte").string()),
            load_idx((dir / "t10k-images-idx3-ubyte").string(), (dir / "t10k-labels-idx1-ubyte").string())};
  }
  const auto& d = c.dataset;
  const std::uint64_t seed = derive_seed(c.seed, {stream::kData});
  return {make_blobs(d.classes, d.per_class, d.dim, d.spread, seed, 0),
          make_blobs(d.classes, d.test_per_class, d.dim, d.spread, seed, 1)};
}

inline Protocol make_protocol(const ExperimentConfig& c, const Dataset& train) {
  Protocol p;
  std::vector<std::size_t> dims{train.feature_dim()};
  dims.insert(dims.end(), c.hidden_dims.begin(), c.hidden_dims.end());
  dims.push_back(train.class_count());
  p.spec = ModelSpec(dims);
  p.federation = c.federation;
  p.unlearn = c.unlearn;
  p.label_kind = c.label_kind;
  p.target_client = c.backdoor.target_client;
  p.poison_fraction = c.backdoor.poison_fraction;
  p.trigger_size = c.backdoor.trigger_size;
  p.trigger_value = c.backdoor.trigger_value;
  p.image_side = c.backdoor.image_side;
  if (p.image_side == 0) {
    p.image_side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(train.feature_dim()))));
  }
  p.validate(train);
  return p;
}

inline std::vector<std::size_t> target_classes(const ExperimentConfig& c, const Dataset& train) {
  if (!c.classes.empty()) {
    for (auto k : c.classes) {
      if (k >= train.class_count()) throw ConfigError("classes: " + std::to_string(k) + " out of range");
    }
    return c.classes;
  }
  std::vector<std::size_t> all(train.class_count());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return all;
}

}  // namespace fedaf
