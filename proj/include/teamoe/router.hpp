// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Sample-level routing from task and era metadata. Each gate looks up an
// embedding row, projects it to N expert logits and applies softmax.

#pragma once

#include "teamoe/ops.hpp"
#include "teamoe/random.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace teamoe {

enum class RoutingMode { SeparateGates, ConcatSingleGate, TaskOnly, EraOnly, NoMoE };

std::string_view to_string(RoutingMode mode);
/// Accepts the CLI spellings: separate, concat, task-only, era-only, no-moe.
RoutingMode parse_routing_mode(std::string_view text);

/// Dataset id -> router task id. Coarse groups datasets by task family; Fine
/// gives every dataset its own id.
class TaskGranularity {
 public:
  enum class Kind { Coarse, Fine };

  TaskGranularity() = default;
  /// Throws ConfigError unless the table is non-empty and its ids cover
  /// 0..max without gaps.
  TaskGranularity(Kind kind, std::vector<int> table);

  static TaskGranularity fine(int n_datasets);

  Kind kind() const { return kind_; }
  int n_datasets() const { return static_cast<int>(table_.size()); }
  /// Number of distinct router task ids.
  int n_task_ids() const { return n_ids_; }
  int map(int dataset_id) const;
  const std::vector<int>& table() const { return table_; }

 private:
  Kind kind_ = Kind::Fine;
  std::vector<int> table_;
  int n_ids_ = 0;
};

std::string_view to_string(TaskGranularity::Kind kind);
TaskGranularity::Kind parse_granularity(std::string_view text);

struct RouterOptions {
  Index n_tasks = 4;
  Index n_eras = 2;
  Index n_experts = 8;
  Index d_task = 16;
  Index d_era = 16;
  Index d_hidden = 32;
};

struct RouterParams {
  Tensor task_embedding;  // V_t [n_tasks x d_task]
  Tensor era_embedding;   // V_e [n_eras x d_era]
  Tensor task_proj;       // W_T [d_task x N]
  Tensor era_proj;        // W_E [d_era x N]
  Tensor concat_hidden;   // M1 [(d_task + d_era) x d_hidden]
  Tensor concat_out;      // M2 [d_hidden x N]

  Index n_experts() const { return task_proj.dim(1); }
  Index n_tasks() const { return task_embedding.dim(0); }
  Index n_eras() const { return era_embedding.dim(0); }
};

/// Embeddings ~ N(0, 1); each projection ~ N(0, 1/fan_in).
RouterParams make_router(const RouterOptions& options, Rng& rng);

/// Parameters that receive gradient under `mode`.
std::vector<Tensor> active_parameters(const RouterParams& params, RoutingMode mode);

struct GateWeights {
  Tensor task;  // w_t [N]
  Tensor era;   // w_e [N]
};

Tensor uniform_weights(Index n);

/// softmax(W_T^T V_t[task_id]).
Tensor task_weights(const RouterParams& params, int task_id);
/// softmax(W_E^T V_e[era_id]).
Tensor era_weights(const RouterParams& params, int era_id);
/// (softmax(M2^T relu(M1^T [V_t[task]; V_e[era]])), uniform): the single
/// concatenated gate stands in for both signals.
GateWeights concat_gate_weights(const RouterParams& params, int task_id, int era_id);

/// Dispatch on mode. `task_id` is the router task id, i.e. already mapped
/// through the run's TaskGranularity. NoMoE needs a single-expert router and
/// returns constant unit weights.
GateWeights route(const RouterParams& params, RoutingMode mode, int task_id, int era_id);

}  // namespace teamoe
