// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geneses/nn.hpp"
#include "geneses/rng.hpp"

namespace geneses::ckpt {

inline constexpr char kMagic[8] = {'G', 'N', 'S', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kVersion = 1;

/// Named little-endian float32 array.
struct Blob {
  std::string name;
  Shape shape;
  std::vector<float> values;

  bool operator==(const Blob&) const = default;
};

/// Everything needed to resume a run bit-exactly. Layout is documented in
/// docs/formats.md.
struct Checkpoint {
  std::uint32_t version = kVersion;
  nlohmann::json meta = nlohmann::json::object();  // config snapshot, stage name, ...
  std::vector<Blob> parameters;
  std::vector<Blob> optimizer;
  std::int64_t step = 0;
  Rng rng;

  const Blob* find(const std::string& name) const;
};

/// Writes atomically (temp file + rename). I/O failure is an io error.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Missing file: checkpoint_missing. Bad magic, truncation or checksum
/// mismatch: checkpoint_corrupt. Other versions: checkpoint_version.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<Blob> capture(const nn::ParameterList<float>& params);

/// Copies blobs into the parameters by name and order. A missing blob, a
/// name mismatch or a shape mismatch is an invalid_shape error naming the
/// first offending blob.
void restore(const nn::ParameterList<float>& params, const std::vector<Blob>& blobs);

/// AdamW moments as blobs named "<param>.m" and "<param>.v".
std::vector<Blob> capture_optimizer(nn::AdamW<float>& opt);
void restore_optimizer(nn::AdamW<float>& opt, const std::vector<Blob>& blobs, std::int64_t step);

}  // namespace geneses::ckpt
