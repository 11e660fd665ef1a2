// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Self-describing binary checkpoint container.
//
// Layout (all integers and floats little-endian):
//
//   char[8]   magic "TEAMOECK"
//   u32       format version (kCheckpointVersion)
//   u64       master seed
//   u64       config length, then that many bytes of run-config JSON
//   u32       tensor count, then per tensor:
//               u32 name length, name bytes
//               u32 rank, rank x u64 dims
//               product(dims) x f64 row-major payload

#pragma once

#include "teamoe/backbone.hpp"
#include "teamoe/config.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace teamoe {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t seed = 0;
  std::string config_json;
  std::vector<StoredTensor> tensors;
};

Checkpoint make_checkpoint(const AdaptedModel& model, const RunConfig& config);

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
/// Throws CheckpointError on bad magic, truncation, or a format version other
/// than kCheckpointVersion (the message names both versions).
Checkpoint read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds the model described by the checkpoint's config and overwrites
/// every tensor with the stored payload.
AdaptedModel restore_model(const Checkpoint& ckpt, RunConfig* config_out = nullptr);

}  // namespace teamoe
