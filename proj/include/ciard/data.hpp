// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ciard/losses.hpp"
#include "ciard/tensor.hpp"

namespace ciard {

/// Samples with pixel/feature values in [0, 1] and integer labels in [0, C).
struct Dataset {
  Tensor xs;  // [N, sample shape...]
  Labels ys;
  std::size_t num_classes = 0;
  std::string name;

  std::size_t size() const noexcept { return ys.size(); }
  Shape sample_shape() const;
  /// Throws FormatError when an invariant is broken.
  void validate() const;
  Dataset subset(std::span<const std::size_t> idx) const;
};

/// Points of two interleaving half circles before rescaling:
/// class 0 on (cos t, sin t), class 1 on (1 - cos t, 0.5 - sin t), t in [0, pi].
struct MoonPoints {
  std::vector<double> x, y;
  Labels labels;
};
MoonPoints two_moons_points(std::size_t n, double noise, std::uint64_t seed);

/// Two-moons rescaled into [0, 1]^2 by a fixed affine map (noise-free extent
/// [-1, 2] x [-0.5, 1] padded by 3 * noise), then clamped.
Dataset gen_two_moons(std::size_t n, double noise, std::uint64_t seed);

/// Isotropic Gaussian blobs with `classes` centres on a circle, rescaled into [0, 1]^2.
Dataset gen_blobs(std::size_t n, std::size_t classes, double spread, std::uint64_t seed);

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Canonical 3073-byte records: one label byte followed by 3072 CHW pixel bytes.
Dataset load_cifar10_bin(const std::vector<std::filesystem::path>& paths);

/// Text dataset: header `shape=<dims> classes=<C> name=<name>`, then one
/// `label,v0,v1,...` line per sample. Values use round-trip float formatting.
void save_dataset_csv(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset_csv(const std::filesystem::path& path);

struct AugmentConfig {
  int crop_pad = 4;
  double hflip_prob = 0.5;
  std::uint64_t seed = 0;
  void validate() const;
};

/// Random zero-padded crop and horizontal flip of [B, C, H, W] batches,
/// seeded by (cfg.seed, epoch, batch_index). Vector batches pass through.
Tensor augment(const Tensor& batch, const AugmentConfig& cfg, std::uint64_t epoch, std::uint64_t batch_index);

/// Deterministic primitives behind `augment`.
Tensor crop_image(const Tensor& image_chw, int pad, int off_r, int off_c);
Tensor hflip_image(const Tensor& image_chw);

struct Batch {
  Tensor x;
  Labels y;
  std::vector<std::size_t> indices;
};

/// Every sample exactly once; the last partial batch is kept.
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, std::size_t batch_size, bool shuffle, std::uint64_t seed);

  bool done() const noexcept { return pos_ >= order_.size(); }
  Batch next();
  std::size_t num_batches() const;
  const std::vector<std::size_t>& order() const noexcept { return order_; }

 private:
  const Dataset* ds_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size, bool shuffle, std::uint64_t seed);

}  // namespace ciard
