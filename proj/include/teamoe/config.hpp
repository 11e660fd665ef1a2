// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a JSON document with "data", "model" and "train"
// sections plus top-level "seed", "out" and "jobs". Every field has a
// default, so "{}" is a complete config. Command-line overrides are applied
// after the file and take precedence over it.

#pragma once

#include "teamoe/training.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace teamoe {

struct RunConfig {
  // data
  int n_tasks = 4;
  int n_eras = 2;
  Index d_in = 16;
  std::vector<int> n_classes{2, 3, 2, 3};
  int train_per_cell = 500;
  int dev_per_cell = 100;
  int test_per_cell = 100;
  double conflict = 1.0;
  double noise_sigma = 0.1;

  // model
  Index d_model = 32;
  Index depth = 2;
  Index rank = 16;
  Index n_experts = 8;
  std::optional<double> alpha;  // defaults to rank
  double dropout = 0.05;
  Index d_task = 16;
  Index d_era = 16;
  Index d_hidden = 32;
  bool per_layer_router = false;
  RoutingMode mode = RoutingMode::SeparateGates;
  TaskGranularity::Kind granularity = TaskGranularity::Kind::Fine;
  std::vector<int> coarse_task_map{0, 0, 1, 1};
  std::vector<int> fine_task_map{0, 1, 2, 3};

  // train
  int epochs = 30;
  Index batch_size = 128;
  double learning_rate = 1e-2;
  OptimizerKind optimizer = OptimizerKind::Adam;
  LrSchedule lr_schedule = LrSchedule::Cosine;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  std::uint64_t seed = 0;
  std::filesystem::path out = "runs/default";
  unsigned jobs = 1;
};

struct FieldError {
  std::string field;
  std::string message;
};

class ConfigValidationError : public ConfigError {
 public:
  explicit ConfigValidationError(std::vector<FieldError> errors);
  const std::vector<FieldError>& errors() const { return errors_; }

 private:
  std::vector<FieldError> errors_;
};

/// Flag overrides; unset fields leave the file value alone.
struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<Index> n_experts;
  std::optional<Index> rank;
  std::optional<std::string> mode;
  std::optional<std::string> granularity;
  std::optional<double> conflict;
};

/// Parses a config document. Unknown keys and mistyped values are reported
/// per field via ConfigValidationError.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string dump_run_config(const RunConfig& config);

void apply_overrides(RunConfig& config, const ConfigOverrides& overrides);

/// Every violated constraint, e.g. {"model.rank", "8 is not divisible by
/// model.n_experts = 3"}. Empty when the config is runnable.
std::vector<FieldError> check_run_config(const RunConfig& config);
/// Throws ConfigValidationError if check_run_config reports anything.
void validate(const RunConfig& config);

SynthSpec synth_spec(const RunConfig& config);
TaskGranularity coarse_granularity(const RunConfig& config);
TaskGranularity fine_granularity(const RunConfig& config);
TrainConfig train_config(const RunConfig& config);

}  // namespace teamoe
