// SPDX-License-Identifier: Apache-2.0
#pragma once

// Checkpoint layout: a UTF-8 manifest followed by raw little-endian f32 blocks.
//
//   ciard-checkpoint 1
//   spec arch=mlp input=2 hidden=64,64 classes=2
//   seed 7
//   lineage pretrain role=clean seed=7
//   tensors 6
//   fc0.weight 64x2 f32 0
//   fc0.bias 64 f32 512
//   ...
//   end
//   <payload>
//
// Byte offsets are relative to the first payload byte.

#include <filesystem>
#include <optional>

#include "ciard/nn.hpp"

namespace ciard {

/// Writes via a temporary file and rename, so a failed save leaves no partial checkpoint.
void save_checkpoint(const Model& model, const std::filesystem::path& path);

/// Throws FormatError on malformed/truncated input and IncompatibleCheckpointError
/// when the manifest disagrees with its own spec or with `expected`.
Model load_checkpoint(const std::filesystem::path& path, const std::optional<ModelSpec>& expected = std::nullopt);

}  // namespace ciard
