// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "teamoe/router.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace teamoe {

std::string_view to_string(RoutingMode mode) {
  switch (mode) {
    case RoutingMode::SeparateGates: return "separate";
    case RoutingMode::ConcatSingleGate: return "concat";
    case RoutingMode::TaskOnly: return "task-only";
    case RoutingMode::EraOnly: return "era-only";
    case RoutingMode::NoMoE: return "no-moe";
  }
  return "?";
}

RoutingMode parse_routing_mode(std::string_view text) {
  for (auto m : {RoutingMode::SeparateGates, RoutingMode::ConcatSingleGate, RoutingMode::TaskOnly,
                 RoutingMode::EraOnly, RoutingMode::NoMoE}) {
    if (text == to_string(m)) return m;
  }
  throw ConfigError("unknown routing mode '" + std::string(text) +
                    "' (expected separate, concat, task-only, era-only or no-moe)");
}

std::string_view to_string(TaskGranularity::Kind kind) {
  return kind == TaskGranularity::Kind::Coarse ? "coarse" : "fine";
}

TaskGranularity::Kind parse_granularity(std::string_view text) {
  if (text == "coarse") return TaskGranularity::Kind::Coarse;
  if (text == "fine") return TaskGranularity::Kind::Fine;
  throw ConfigError("unknown granularity '" + std::string(text) + "' (expected coarse or fine)");
}

TaskGranularity::TaskGranularity(Kind kind, std::vector<int> table) : kind_(kind), table_(std::move(table)) {
  if (table_.empty()) throw ConfigError("task granularity table is empty");
  std::set<int> ids(table_.begin(), table_.end());
  if (*ids.begin() != 0 || *ids.rbegin() != static_cast<int>(ids.size()) - 1) {
    throw ConfigError("task granularity ids must cover 0..k-1 without gaps");
  }
  n_ids_ = static_cast<int>(ids.size());
}

TaskGranularity TaskGranularity::fine(int n_datasets) {
  std::vector<int> table(static_cast<std::size_t>(n_datasets));
  for (int i = 0; i < n_datasets; ++i) table[static_cast<std::size_t>(i)] = i;
  return TaskGranularity(Kind::Fine, std::move(table));
}

int TaskGranularity::map(int dataset_id) const {
  if (dataset_id < 0 || dataset_id >= n_datasets()) {
    throw DataError("dataset id " + std::to_string(dataset_id) + " has no task id in the granularity table");
  }
  return table_[static_cast<std::size_t>(dataset_id)];
}

RouterParams make_router(const RouterOptions& o, Rng& rng) {
  if (o.n_tasks < 1 || o.n_eras < 1) throw ConfigError("router needs at least one task and one era");
  if (o.n_experts < 1) throw ConfigError("router needs at least one expert");
  auto inv_sqrt = [](Index fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  RouterParams p;
  p.task_embedding = randn<double>({o.n_tasks, o.d_task}, rng, 1.0, true);
  p.era_embedding = randn<double>({o.n_eras, o.d_era}, rng, 1.0, true);
  p.task_proj = randn<double>({o.d_task, o.n_experts}, rng, inv_sqrt(o.d_task), true);
  p.era_proj = randn<double>({o.d_era, o.n_experts}, rng, inv_sqrt(o.d_era), true);
  p.concat_hidden = randn<double>({o.d_task + o.d_era, o.d_hidden}, rng, inv_sqrt(o.d_task + o.d_era), true);
  p.concat_out = randn<double>({o.d_hidden, o.n_experts}, rng, inv_sqrt(o.d_hidden), true);
  return p;
}

std::vector<Tensor> active_parameters(const RouterParams& p, RoutingMode mode) {
  switch (mode) {
    case RoutingMode::SeparateGates: return {p.task_embedding, p.era_embedding, p.task_proj, p.era_proj};
    case RoutingMode::ConcatSingleGate: return {p.task_embedding, p.era_embedding, p.concat_hidden, p.concat_out};
    case RoutingMode::TaskOnly: return {p.task_embedding, p.task_proj};
    case RoutingMode::EraOnly: return {p.era_embedding, p.era_proj};
    case RoutingMode::NoMoE: return {};
  }
  return {};
}

Tensor uniform_weights(Index n) { return Tensor::full({n}, 1.0 / static_cast<double>(n)); }

namespace {

// softmax(proj^T v) with v a rank-1 embedding row.
Tensor gate(const Tensor& embedding_row, const Tensor& proj) {
  Tensor logits = matmul(reshape(embedding_row, {1, embedding_row.dim(0)}), proj);
  return softmax(reshape(logits, {proj.dim(1)}));
}

}  // namespace

Tensor task_weights(const RouterParams& params, int task_id) {
  if (task_id < 0 || task_id >= params.n_tasks()) {
    throw DataError("task id " + std::to_string(task_id) + " outside [0, " + std::to_string(params.n_tasks()) + ")");
  }
  return gate(row(params.task_embedding, task_id), params.task_proj);
}

Tensor era_weights(const RouterParams& params, int era_id) {
  if (era_id < 0 || era_id >= params.n_eras()) {
    throw DataError("era id " + std::to_string(era_id) + " outside [0, " + std::to_string(params.n_eras()) + ")");
  }
  return gate(row(params.era_embedding, era_id), params.era_proj);
}

GateWeights concat_gate_weights(const RouterParams& params, int task_id, int era_id) {
  if (task_id < 0 || task_id >= params.n_tasks()) {
    throw DataError("task id " + std::to_string(task_id) + " outside [0, " + std::to_string(params.n_tasks()) + ")");
  }
  if (era_id < 0 || era_id >= params.n_eras()) {
    throw DataError("era id " + std::to_string(era_id) + " outside [0, " + std::to_string(params.n_eras()) + ")");
  }
  Tensor joint = concat(row(params.task_embedding, task_id), row(params.era_embedding, era_id));
  Tensor hidden = relu(matmul(reshape(joint, {1, joint.dim(0)}), params.concat_hidden));
  Tensor logits = matmul(hidden, params.concat_out);
  return {softmax(reshape(logits, {params.n_experts()})), uniform_weights(params.n_experts())};
}

GateWeights route(const RouterParams& params, RoutingMode mode, int task_id, int era_id) {
  const Index n = params.n_experts();
  switch (mode) {
    case RoutingMode::SeparateGates: return {task_weights(params, task_id), era_weights(params, era_id)};
    case RoutingMode::ConcatSingleGate: return concat_gate_weights(params, task_id, era_id);
    case RoutingMode::TaskOnly: return {task_weights(params, task_id), uniform_weights(n)};
    case RoutingMode::EraOnly: return {uniform_weights(n), era_weights(params, era_id)};
    case RoutingMode::NoMoE:
      if (n != 1) throw ConfigError("no-moe routing needs exactly one expert, router has " + std::to_string(n));
      return {uniform_weights(1), uniform_weights(1)};
  }
  throw ContractError("unhandled routing mode");
}

}  // namespace teamoe
