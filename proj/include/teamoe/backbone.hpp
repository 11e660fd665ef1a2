// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small frozen MLP standing in for a pretrained network, with a task/era
// adapter on every linear layer and one trainable classification head per
// dataset.

#pragma once

#include "teamoe/adapters.hpp"
#include "teamoe/router.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace teamoe {

struct BackboneConfig {
  Index d_in = 16;
  Index d_model = 32;
  Index depth = 2;
  std::vector<Index> head_widths;  // one entry per dataset (task) id
};

struct ModelConfig {
  BackboneConfig backbone;
  AdapterOptions adapter;
  Index n_eras = 2;
  Index d_task = 16;
  Index d_era = 16;
  Index d_hidden = 32;
  RoutingMode mode = RoutingMode::SeparateGates;
  TaskGranularity granularity;
  bool per_layer_router = false;
};

/// Throws ConfigError describing the first inconsistency.
void validate(const ModelConfig& config);

struct LinearHead {
  Tensor weight;  // [classes x d_model]
  Tensor bias;    // [classes]
};

struct AdaptedModel {
  ModelConfig config;
  std::vector<TeaAdapterLayer> layers;
  std::vector<RouterParams> routers;  // one shared, or one per layer
  std::vector<LinearHead> heads;

  const RouterParams& router_for(std::size_t layer) const {
    return routers.size() == 1 ? routers.front() : routers.at(layer);
  }
};

/// Builds a model whose components draw from independent streams of
/// `init_seed`, so the frozen backbone and heads are identical across routing
/// modes and expert counts. Frozen weights are orthogonal; a layer followed
/// by a rectifier is sign-paired so the untrained backbone is linear in x.
AdaptedModel make_model(const ModelConfig& config, std::uint64_t init_seed);

/// Gate weights the model applies at `layer` for a sample of the given dataset
/// and era.
GateWeights model_route(const AdaptedModel& model, int dataset_id, int era_id, std::size_t layer = 0);

/// Logits [batch x head width] for a metadata-homogeneous batch. A rectifier
/// sits between adapted layers, not after the last one.
Tensor forward(const AdaptedModel& model, const Tensor& x, int dataset_id, int era_id,
               const ForwardContext& ctx = {});

/// Per-sample metadata variant; throws ContractError unless every sample
/// shares one (dataset, era) pair.
Tensor forward(const AdaptedModel& model, const Tensor& x, std::span<const int> dataset_ids,
               std::span<const int> era_ids, const ForwardContext& ctx = {});

/// Tensors the optimizer updates: expert A/B, the active router parameters
/// and every head.
std::vector<Tensor> trainable_parameters(const AdaptedModel& model);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Every tensor in the model under its checkpoint name, e.g.
/// "layer0.expert3.A", "layer1.base.W0", "router.V_t", "head2.W".
std::vector<NamedTensor> named_tensors(const AdaptedModel& model);

using FrozenSnapshot = std::map<std::string, Matrix>;

FrozenSnapshot snapshot_frozen(const AdaptedModel& model);
/// True iff every frozen tensor is bit-identical to the snapshot.
bool freeze_check(const AdaptedModel& model, const FrozenSnapshot& snapshot);

}  // namespace teamoe
