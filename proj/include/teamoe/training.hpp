// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Joint multi-task, multi-era training of adapter, router and head
// parameters, plus the ablation grid and the per-cell baseline.

#pragma once

#include "teamoe/backbone.hpp"
#include "teamoe/synthdata.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace teamoe {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OptimizerKind { Sgd, Adam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view text);

/// Cosine anneals the learning rate per step from its configured value
/// towards zero: lr * (1 + cos(pi * step / total_steps)) / 2.
enum class LrSchedule { Constant, Cosine };

std::string_view to_string(LrSchedule schedule);
LrSchedule parse_lr_schedule(std::string_view text);
double scheduled_learning_rate(double base, LrSchedule schedule, std::uint64_t step, std::uint64_t total_steps);

struct TrainConfig {
  ModelConfig model;
  int epochs = 30;
  Index batch_size = 128;
  double learning_rate = 1e-2;
  OptimizerKind optimizer = OptimizerKind::Adam;
  LrSchedule schedule = LrSchedule::Cosine;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
};

/// Structural checks for training. learning_rate may be zero here (a no-op
/// optimizer); the run-config loader is stricter.
void validate(const TrainConfig& config);

/// Plain gradient descent or Adam over a fixed parameter list. Parameters
/// without a gradient in a step are skipped.
class Optimizer {
 public:
  Optimizer(std::vector<Tensor> params, const TrainConfig& config);

  void zero_grad();
  void step();
  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }
  const std::vector<Tensor>& params() const { return params_; }
  std::uint64_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  OptimizerKind kind_;
  double lr_, beta1_, beta2_, eps_;
  std::vector<Matrix> m_, v_;
  std::uint64_t t_ = 0;
};

/// Mean cross-entropy of the batch's task head against its labels.
Tensor joint_loss(const AdaptedModel& model, std::span<const Sample> samples, const Batch& batch,
                  const ForwardContext& ctx = {});

struct CellMetrics {
  int task_id = 0;
  int era_id = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

struct SplitMetrics {
  std::vector<CellMetrics> cells;  // sorted by (task, era)

  /// Equal-weight mean over cells.
  double mean_accuracy() const;
  double mean_loss() const;
};

/// Eval-mode loss and accuracy per (task, era) cell.
SplitMetrics evaluate(const AdaptedModel& model, std::span<const Sample> samples, Index batch_size = 256);

struct RunResult {
  std::string variant;
  std::vector<double> epoch_train_loss;  // eval-mode loss over the train split after each epoch
  std::vector<double> step_loss;
  std::vector<SplitMetrics> dev_history;  // one entry per epoch
  SplitMetrics dev;
  SplitMetrics test;
  double wall_seconds = 0.0;
  AdaptedModel model;  // final parameters
};

/// Trains on `data.train`, recording dev metrics each epoch and test metrics at
/// the end. Throws ContractError if some configured (task, era) cell has no
/// training data and DivergenceError naming the step if the loss stops being
/// finite.
RunResult train(const TrainConfig& config, const Dataset& data);

/// Baseline: one single-expert, no-routing model per (task, era) cell, each
/// trained only on that cell. Cell metrics come from the cell's own model;
/// `model` holds the last cell's model.
RunResult train_per_cell(const TrainConfig& config, const Dataset& data);

struct AblationVariant {
  RoutingMode mode;
  std::optional<TaskGranularity> granularity;  // empty when the mode has no task gate
  std::string name() const;
  std::string granularity_label() const;
};

/// {no-moe, era-only} once each, {task-only, separate, concat} at both
/// granularities.
std::vector<AblationVariant> default_ablation_grid(const TaskGranularity& coarse, const TaskGranularity& fine);

/// Config for one variant derived from `base`: no-moe forces one expert, and
/// variants without a granularity keep the fine table.
TrainConfig variant_config(const TrainConfig& base, const AblationVariant& variant, const TaskGranularity& fine);

struct AblationRow {
  AblationVariant variant;
  RunResult result;
};

/// Runs every variant on the same data and seed. `jobs` > 1 runs variants on
/// worker threads; results are identical either way.
std::vector<AblationRow> run_ablation_suite(const TrainConfig& base, const std::vector<AblationVariant>& grid,
                                            const TaskGranularity& fine, const Dataset& data, unsigned jobs = 1);

/// Flat CSV, header "variant,cell,metric,value"; cell is "t{task}e{era}" or
/// "all". Contains no timing, so identical runs give identical bytes.
void write_metrics_csv(std::ostream& os, const RunResult& result);

/// Header "variant,granularity,cell,accuracy,loss" with test metrics per cell
/// and a "mean" row per variant.
void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);

}  // namespace teamoe
