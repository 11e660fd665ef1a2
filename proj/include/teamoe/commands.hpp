// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Entry points behind the tea_moelora subcommands. Each returns a process
// exit code and reports problems on stderr.
//
// Output directory layout:
//   config.json          effective config after overrides
//   metrics.csv          flat per-cell metrics (train)
//   result.json          structured run record incl. wall clock (train)
//   checkpoint.bin       model checkpoint (train)
//   ablation.csv         variant comparison (ablate)
//   heatmap_<axis>.csv   utilization matrix (analyze)
//   smoothness_<axis>.json

#pragma once

#include "teamoe/analysis.hpp"
#include "teamoe/config.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

namespace teamoe {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kBadConfig = 2;
inline constexpr int kLocked = 3;
}  // namespace exit_code

/// Reads TEA_LOG (trace, debug, info, warn, error, off; default info).
void init_logging();

/// Exclusive lock on an output directory via an O_EXCL lock file; released on
/// destruction. Throws std::runtime_error if another process holds it.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// Loads `config_path` (or defaults when empty), applies overrides and
/// validates. Throws ConfigValidationError listing every bad field.
RunConfig resolve_config(const std::optional<std::filesystem::path>& config_path, const ConfigOverrides& overrides);

int cmd_train(const std::optional<std::filesystem::path>& config_path, const ConfigOverrides& overrides);
int cmd_ablate(const std::optional<std::filesystem::path>& config_path, const ConfigOverrides& overrides);
/// Writes next to the checkpoint unless `out_dir` is given.
int cmd_analyze(const std::filesystem::path& checkpoint_path, Axis axis,
                const std::optional<std::filesystem::path>& out_dir = std::nullopt);

struct GradcheckOptions {
  int n_seeds = 10;
  double step = 1e-5;
  double tolerance = 1e-5;
  /// Applied to the logits before the loss; lets tests splice in an operation
  /// with a deliberately wrong backward rule.
  std::function<Tensor(const Tensor&)> logits_hook;
};

struct GradcheckReport {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t tensors_checked = 0;
  double seconds = 0.0;
  bool passed = false;
};

/// Analytic vs. central-difference gradients of the joint loss for a tiny
/// model (d_model 8, 2 experts, rank 4) built from `config`'s data layout,
/// in separate-gate and concat-gate modes, with dropout active under a pinned
/// mask, over `n_seeds` seeds.
GradcheckReport run_gradcheck(const RunConfig& config, const GradcheckOptions& options = {});

int cmd_gradcheck(const std::optional<std::filesystem::path>& config_path, const ConfigOverrides& overrides,
                  const GradcheckOptions& options = {});

}  // namespace teamoe
