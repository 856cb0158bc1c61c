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

// Datasets, IDX (MNIST) I/O, synthetic blobs, client partitioning and
// backdoor trigger injection.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedaf/error.hpp"
#include "fedaf/nn.hpp"
#include "fedaf/rng.hpp"

namespace fedaf {

using IndexSet = std::vector<std::size_t>;

// Features in [0,1] with one-hot labels over `class_count` classes.
class Dataset {
 public:
  Dataset() = default;

  Dataset(Matrix features, std::span<const std::size_t> classes, std::size_t class_count)
      : class_count_(class_count), classes_(classes.begin(), classes.end()) {
    if (class_count_ == 0) throw InvalidArgument("Dataset: class_count must be >= 1");
    if (static_cast<std::size_t>(features.rows()) != classes_.size()) {
      throw DimensionError("Dataset: " + std::to_string(features.rows()) + " rows vs " +
                           std::to_string(classes_.size()) + " labels");
    }
    if (features.size() > 0 && (features.minCoeff() < 0.0 || features.maxCoeff() > 1.0)) {
      throw InvalidArgument("Dataset: feature entries must lie in [0,1]");
    }
    data_.labels = Matrix::Zero(features.rows(), static_cast<Eigen::Index>(class_count_));
    for (std::size_t i = 0; i < classes_.size(); ++i) {
      if (classes_[i] >= class_count_) {
        throw InvalidArgument("Dataset: label " + std::to_string(classes_[i]) + " at row " +
                              std::to_string(i) + " >= class_count");
      }
      data_.labels(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(classes_[i])) = 1.0;
    }
    data_.features = std::move(features);
  }

  std::size_t size() const { return classes_.size(); }
  std::size_t feature_dim() const { return static_cast<std::size_t>(data_.features.cols()); }
  std::size_t class_count() const { return class_count_; }
  const Matrix& features() const { return data_.features; }
  const Matrix& labels() const { return data_.labels; }
  const Batch& batch() const { return data_; }
  std::size_t label(std::size_t row) const { return classes_.at(row); }
  std::span<const std::size_t> classes() const { return classes_; }

  Dataset subset(std::span<const std::size_t> rows) const {
    std::vector<std::size_t> cls;
    cls.reserve(rows.size());
    for (std::size_t r : rows) cls.push_back(classes_.at(r));
    return Dataset(gather_rows(data_.features, rows), cls, class_count_);
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(class_count_, 0);
    for (std::size_t c : classes_) ++counts[c];
    return counts;
  }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.class_count_ == b.class_count_ && a.classes_ == b.classes_ &&
           a.data_.features.rows() == b.data_.features.rows() &&
           a.data_.features.cols() == b.data_.features.cols() &&
           a.data_.features == b.data_.features;
  }

 private:
  std::size_t class_count_ = 0;
  std::vector<std::size_t> classes_;
  Batch data_;
};

// ---------------------------------------------------------------------------
// IDX files.

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

inline void put_be32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes, 4);
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

// Reads an MNIST-style image/label file pair. Pixels are scaled by 1/255.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::size_t class_count = 10) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  if (img.size() < 4 || detail::be32(img, 0) != kIdxImageMagic) {
    throw IdxMagicError(images_path + ": not an IDX image file (bad magic)");
  }
  if (lab.size() < 4 || detail::be32(lab, 0) != kIdxLabelMagic) {
    throw IdxMagicError(labels_path + ": not an IDX label file (bad magic)");
  }
  if (img.size() < 16) throw IdxTruncatedError(images_path + ": truncated header");
  if (lab.size() < 8) throw IdxTruncatedError(labels_path + ": truncated header");
  const std::size_t n = detail::be32(img, 4);
  const std::size_t rows = detail::be32(img, 8);
  const std::size_t cols = detail::be32(img, 12);
  const std::size_t n_labels = detail::be32(lab, 4);
  const std::size_t dim = rows * cols;
  if (img.size() < 16 + n * dim) {
    throw IdxTruncatedError(images_path + ": expected " + std::to_string(n * dim) +
                            " pixel bytes, found " + std::to_string(img.size() - 16));
  }
  if (lab.size() < 8 + n_labels) {
    throw IdxTruncatedError(labels_path + ": expected " + std::to_string(n_labels) +
                            " label bytes, found " + std::to_string(lab.size() - 8));
  }
  if (n != n_labels) {
    throw IdxCountMismatchError(std::to_string(n) + " images vs " + std::to_string(n_labels) +
                                " labels");
  }
  Matrix features(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < n * dim; ++i) features.data()[i] = img[16 + i] / 255.0;
  std::vector<std::size_t> classes(lab.begin() + 8, lab.begin() + 8 + static_cast<std::ptrdiff_t>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (classes[i] >= class_count) {
      throw IdxError(labels_path + ": label " + std::to_string(classes[i]) + " at index " +
                     std::to_string(i) + " out of range");
    }
  }
  return Dataset(std::move(features), classes, class_count);
}

// Writes `data` as an IDX pair. Features must be multiples of 1/255 for the
// round trip to be exact; other values are rounded to the nearest byte.
inline void write_idx(const Dataset& data, const std::string& images_path,
                      const std::string& labels_path, std::uint32_t rows, std::uint32_t cols) {
  if (std::size_t{rows} * cols != data.feature_dim()) {
    throw DimensionError("write_idx: " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " != feature dim " + std::to_string(data.feature_dim()));
  }
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw IdxError("cannot create IDX output files");
  detail::put_be32(img, kIdxImageMagic);
  detail::put_be32(img, static_cast<std::uint32_t>(data.size()));
  detail::put_be32(img, rows);
  detail::put_be32(img, cols);
  std::vector<char> bytes(data.features().size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(data.features().data()[i] * 255.0)));
  }
  img.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  detail::put_be32(lab, kIdxLabelMagic);
  detail::put_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (std::size_t c : data.classes()) lab.put(static_cast<char>(c));
}

// ---------------------------------------------------------------------------
// Synthetic data.

// `per_class` samples for each of `classes` Gaussian clusters around centers
// drawn uniformly from [0.2, 0.8]^dim, clipped to [0,1]. Class-major order.
// Centers depend only on `seed`; `draw` selects an independent noise sample
// around the same centers (e.g. a held-out split).
inline Dataset make_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double spread,
                          std::uint64_t seed, std::uint64_t draw = 0) {
  if (classes < 2) throw InvalidArgument("make_blobs: need at least 2 classes");
  if (per_class < 1) throw InvalidArgument("make_blobs: per_class must be >= 1");
  if (dim < 1) throw InvalidArgument("make_blobs: dim must be >= 1");
  Rng center_rng(derive_seed(seed, {0}));
  Matrix centers(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < centers.size(); ++i) centers.data()[i] = center_rng.uniform(0.2, 0.8);

  Rng rng(derive_seed(seed, {1, draw}));
  Matrix x(static_cast<Eigen::Index>(classes * per_class), static_cast<Eigen::Index>(dim));
  std::vector<std::size_t> y;
  y.reserve(classes * per_class);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t s = 0; s < per_class; ++s) {
      const auto row = static_cast<Eigen::Index>(y.size());
      for (std::size_t j = 0; j < dim; ++j) {
        const double v = centers(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)) +
                         spread * rng.normal();
        x(row, static_cast<Eigen::Index>(j)) = std::clamp(v, 0.0, 1.0);
      }
      y.push_back(c);
    }
  }
  return Dataset(std::move(x), y, classes);
}

// ---------------------------------------------------------------------------
// Partitioning and selection.

struct ClientPartition {
  std::vector<IndexSet> assignments;

  std::size_t client_count() const { return assignments.size(); }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> out;
    for (const auto& a : assignments) out.push_back(a.size());
    return out;
  }

  // Throws unless the sets exactly cover [0, n) with every set nonempty.
  void validate(std::size_t n) const {
    if (assignments.empty()) throw InvalidArgument("ClientPartition: no clients");
    std::vector<char> seen(n, 0);
    for (std::size_t k = 0; k < assignments.size(); ++k) {
      if (assignments[k].empty()) throw InvalidArgument("ClientPartition: client " + std::to_string(k) + " is empty");
      for (std::size_t i : assignments[k]) {
        if (i >= n) throw InvalidArgument("ClientPartition: index " + std::to_string(i) + " out of range");
        if (seen[i]++) throw InvalidArgument("ClientPartition: index " + std::to_string(i) + " assigned twice");
      }
    }
    if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
      throw InvalidArgument("ClientPartition: not every index is assigned");
    }
  }
};

// Seeded shuffle of [0, n) cut into `clients` contiguous chunks; the first
// n % clients chunks get one extra element. Each chunk is sorted.
inline ClientPartition partition_iid(std::size_t n, std::size_t clients, std::uint64_t seed) {
  if (clients == 0) throw InvalidArgument("partition_iid: need at least one client");
  if (clients > n) {
    throw InvalidArgument("partition_iid: " + std::to_string(clients) + " clients for " +
                          std::to_string(n) + " samples");
  }
  Rng rng(seed);
  const auto perm = rng.permutation(n);
  ClientPartition p;
  std::size_t at = 0;
  for (std::size_t k = 0; k < clients; ++k) {
    const std::size_t len = n / clients + (k < n % clients ? 1 : 0);
    IndexSet s(perm.begin() + static_cast<std::ptrdiff_t>(at),
               perm.begin() + static_cast<std::ptrdiff_t>(at + len));
    std::sort(s.begin(), s.end());
    p.assignments.push_back(std::move(s));
    at += len;
  }
  return p;
}

inline ClientPartition partition_iid(const Dataset& data, std::size_t clients, std::uint64_t seed) {
  return partition_iid(data.size(), clients, seed);
}

inline IndexSet select_class(const Dataset& data, std::size_t class_id) {
  if (class_id >= data.class_count()) {
    throw InvalidArgument("select_class: class " + std::to_string(class_id) + " >= " +
                          std::to_string(data.class_count()));
  }
  IndexSet out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.label(i) == class_id) out.push_back(i);
  }
  return out;
}

// Elements of `among` (in order) whose label is `class_id`.
inline IndexSet select_class(const Dataset& data, std::size_t class_id, std::span<const std::size_t> among) {
  if (class_id >= data.class_count()) throw InvalidArgument("select_class: class out of range");
  IndexSet out;
  for (std::size_t i : among) {
    if (data.label(i) == class_id) out.push_back(i);
  }
  return out;
}

// `from` minus `remove`, preserving order.
inline IndexSet set_difference(std::span<const std::size_t> from, std::span<const std::size_t> remove) {
  IndexSet sorted(remove.begin(), remove.end());
  std::sort(sorted.begin(), sorted.end());
  IndexSet out;
  for (std::size_t i : from) {
    if (!std::binary_search(sorted.begin(), sorted.end(), i)) out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backdoor.

struct BackdoorSpec {
  std::vector<std::size_t> trigger_coords;
  double trigger_value = 1.0;
  std::vector<std::size_t> flip_map;  // flip_map[c] = poisoned label of class c
  double poison_fraction = 1.0;

  std::size_t flip(std::size_t c) const { return flip_map.at(c); }

  void validate(std::size_t feature_dim, std::size_t class_count) const {
    if (!(trigger_value >= 0.0 && trigger_value <= 1.0)) throw InvalidArgument("BackdoorSpec: trigger_value outside [0,1]");
    if (!(poison_fraction > 0.0 && poison_fraction <= 1.0)) throw InvalidArgument("BackdoorSpec: poison_fraction outside (0,1]");
    for (std::size_t c : trigger_coords) {
      if (c >= feature_dim) throw InvalidArgument("BackdoorSpec: trigger coord " + std::to_string(c) + " >= feature dim");
    }
    if (flip_map.size() != class_count) throw InvalidArgument("BackdoorSpec: flip map size != class count");
    for (std::size_t c = 0; c < flip_map.size(); ++c) {
      if (flip_map[c] == c || flip_map[c] >= class_count) {
        throw InvalidArgument("BackdoorSpec: invalid flip for class " + std::to_string(c));
      }
    }
  }
};

// c -> (c + 1 + u) mod C, with u uniform on [0, C-2] drawn from `seed`.
inline std::vector<std::size_t> shifted_flip_map(std::size_t class_count, std::uint64_t seed) {
  if (class_count < 2) throw InvalidArgument("flip map needs at least 2 classes");
  Rng rng(seed);
  const std::size_t u = rng.below(class_count - 1);
  std::vector<std::size_t> map(class_count);
  for (std::size_t c = 0; c < class_count; ++c) map[c] = (c + 1 + u) % class_count;
  return map;
}

// A block x block square of pixels in the bottom-right corner of a
// side x side row-major image.
inline std::vector<std::size_t> corner_trigger(std::size_t side, std::size_t block) {
  if (block == 0 || block > side) throw InvalidArgument("corner_trigger: bad block size");
  std::vector<std::size_t> coords;
  for (std::size_t r = side - block; r < side; ++r) {
    for (std::size_t c = side - block; c < side; ++c) coords.push_back(r * side + c);
  }
  return coords;
}

inline BackdoorSpec make_corner_backdoor(std::size_t side, std::size_t block, std::size_t class_count,
                                         std::uint64_t seed, double poison_fraction = 1.0,
                                         double trigger_value = 1.0) {
  BackdoorSpec b{corner_trigger(side, block), trigger_value, shifted_flip_map(class_count, seed),
                 poison_fraction};
  b.validate(side * side, class_count);
  return b;
}

// The rows of `targets` that inject_backdoor poisons: a seeded subset of
// round(fraction * |targets|) rows (at least one), in the order given.
inline IndexSet poisoned_rows(std::span<const std::size_t> targets, double fraction, std::uint64_t seed) {
  if (targets.empty()) return {};
  const auto count = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(targets.size()))), 1,
      targets.size());
  if (count == targets.size()) return {targets.begin(), targets.end()};
  Rng rng(seed);
  auto perm = rng.permutation(targets.size());
  perm.resize(count);
  std::sort(perm.begin(), perm.end());
  IndexSet out;
  for (std::size_t p : perm) out.push_back(targets[p]);
  return out;
}

inline Dataset inject_backdoor(const Dataset& data, std::span<const std::size_t> targets,
                               const BackdoorSpec& spec, std::uint64_t seed) {
  spec.validate(data.feature_dim(), data.class_count());
  for (std::size_t t : targets) {
    if (t >= data.size()) throw InvalidArgument("inject_backdoor: index " + std::to_string(t) + " out of range");
  }
  Matrix x = data.features();
  std::vector<std::size_t> y(data.classes().begin(), data.classes().end());
  for (std::size_t row : poisoned_rows(targets, spec.poison_fraction, seed)) {
    for (std::size_t c : spec.trigger_coords) {
      x(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(c)) = spec.trigger_value;
    }
    y[row] = spec.flip(data.label(row));
  }
  return Dataset(std::move(x), y, data.class_count());
}

}  // namespace fedaf
