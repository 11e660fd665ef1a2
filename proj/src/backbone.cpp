// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "teamoe/backbone.hpp"

#include <Eigen/QR>
#include <cmath>
#include <cstring>

namespace teamoe {

namespace {

constexpr std::uint64_t kBaseStream = 10;
constexpr std::uint64_t kAdapterStream = 100;
constexpr std::uint64_t kRouterStream = 200;
constexpr std::uint64_t kHeadStream = 300;
constexpr double kBiasStd = 0.1;

// rows x cols with orthonormal columns (rows >= cols) or orthonormal rows.
Matrix orthonormal(Index rows, Index cols, Rng& rng) {
  const Matrix g = randn<double>({std::max(rows, cols), std::min(rows, cols)}, rng, 1.0, false).value();
  const Eigen::HouseholderQR<Matrix> qr(g);
  const Matrix q = qr.householderQ() * Matrix::Identity(g.rows(), g.cols());
  return rows >= cols ? q : Matrix(q.transpose());
}

// Orthogonal, "looks-linear" frozen weights. Output rows feeding a rectifier
// come in sign pairs [P; -P] with bias [c; -c]; input columns reading a
// rectified layer come in pairs [V, -V]. Then V relu(z) - V relu(-z) = V z and
// the untrained backbone is affine in x.
FrozenLinear make_frozen_base(Index d_in, Index d_out, bool rectified_out, bool rectified_in, Rng& rng) {
  const Index in_half = rectified_in ? d_in / 2 : 0;
  const Index in_free = d_in - 2 * in_half;
  const Index out_half = rectified_out ? d_out / 2 : 0;
  const Index out_free = d_out - 2 * out_half;

  // Core map from the effective input (paired halves collapsed) to the
  // effective output.
  const Index core_in = in_half + in_free;
  const Index core_out = out_half + out_free;
  const Matrix core = orthonormal(core_out, core_in, rng);
  Matrix cols(core_out, d_in);
  cols.leftCols(in_half) = core.leftCols(in_half);
  cols.middleCols(in_half, in_half) = -core.leftCols(in_half);
  cols.rightCols(in_free) = core.rightCols(in_free);

  Matrix w(d_out, d_in);
  w.topRows(out_half) = cols.topRows(out_half);
  w.middleRows(out_half, out_half) = -cols.topRows(out_half);
  w.bottomRows(out_free) = cols.bottomRows(out_free);

  const Matrix c = randn<double>({1, core_out}, rng, kBiasStd, false).value();
  std::vector<double> bias(static_cast<std::size_t>(d_out));
  for (Index i = 0; i < out_half; ++i) {
    bias[static_cast<std::size_t>(i)] = c(0, i);
    bias[static_cast<std::size_t>(out_half + i)] = -c(0, i);
  }
  for (Index i = 0; i < out_free; ++i) bias[static_cast<std::size_t>(2 * out_half + i)] = c(0, out_half + i);

  FrozenLinear base;
  base.weight = Tensor::from_matrix(w, false);
  base.bias = Tensor::from_data({d_out}, bias, false);
  return base;
}

}  // namespace

void validate(const ModelConfig& c) {
  const auto& b = c.backbone;
  if (b.d_in < 1 || b.d_model < 1) throw ConfigError("backbone widths must be positive");
  if (b.depth < 1) throw ConfigError("backbone depth must be >= 1");
  if (b.head_widths.empty()) throw ConfigError("backbone needs at least one head");
  for (Index w : b.head_widths) {
    if (w < 2) throw ConfigError("every head needs at least two classes");
  }
  if (c.granularity.n_datasets() != static_cast<int>(b.head_widths.size())) {
    throw ConfigError("granularity table covers " + std::to_string(c.granularity.n_datasets()) +
                      " datasets but the backbone has " + std::to_string(b.head_widths.size()) + " heads");
  }
  if (c.adapter.n_experts < 1 || c.adapter.rank < 1 || c.adapter.rank % c.adapter.n_experts != 0) {
    throw ConfigError("rank " + std::to_string(c.adapter.rank) + " must be a positive multiple of n_experts " +
                      std::to_string(c.adapter.n_experts));
  }
  if (c.mode == RoutingMode::NoMoE && c.adapter.n_experts != 1) {
    throw ConfigError("no-moe mode needs n_experts = 1");
  }
  if (c.n_eras < 1) throw ConfigError("n_eras must be >= 1");
  if (c.d_task < 1 || c.d_era < 1 || c.d_hidden < 1) throw ConfigError("router dimensions must be positive");
}

AdaptedModel make_model(const ModelConfig& config, std::uint64_t init_seed) {
  validate(config);
  AdaptedModel model;
  model.config = config;
  const auto& b = config.backbone;

  for (Index l = 0; l < b.depth; ++l) {
    const auto ul = static_cast<std::uint64_t>(l);
    Rng base_rng(derive_seed(init_seed, kBaseStream + ul));
    Rng adapter_rng(derive_seed(init_seed, kAdapterStream + ul));
    const Index d_in = l == 0 ? b.d_in : b.d_model;
    auto base = make_frozen_base(d_in, b.d_model, l + 1 < b.depth, l > 0, base_rng);
    model.layers.push_back(make_tea_layer(std::move(base), config.adapter, adapter_rng));
  }

  RouterOptions ro;
  ro.n_tasks = config.granularity.n_task_ids();
  ro.n_eras = config.n_eras;
  ro.n_experts = config.adapter.n_experts;
  ro.d_task = config.d_task;
  ro.d_era = config.d_era;
  ro.d_hidden = config.d_hidden;
  const Index n_routers = config.per_layer_router ? b.depth : 1;
  for (Index l = 0; l < n_routers; ++l) {
    Rng rng(derive_seed(init_seed, kRouterStream + static_cast<std::uint64_t>(l)));
    model.routers.push_back(make_router(ro, rng));
  }

  const double head_std = 1.0 / std::sqrt(static_cast<double>(b.d_model));
  for (std::size_t t = 0; t < b.head_widths.size(); ++t) {
    Rng rng(derive_seed(init_seed, kHeadStream + t));
    LinearHead head;
    head.weight = randn<double>({b.head_widths[t], b.d_model}, rng, head_std, true);
    head.bias = Tensor::zeros({b.head_widths[t]}, true);
    model.heads.push_back(std::move(head));
  }
  return model;
}

GateWeights model_route(const AdaptedModel& model, int dataset_id, int era_id, std::size_t layer) {
  const int task_id = model.config.granularity.map(dataset_id);
  return route(model.router_for(layer), model.config.mode, task_id, era_id);
}

Tensor forward(const AdaptedModel& model, const Tensor& x, int dataset_id, int era_id, const ForwardContext& ctx) {
  if (dataset_id < 0 || dataset_id >= static_cast<int>(model.heads.size())) {
    throw DataError("dataset id " + std::to_string(dataset_id) + " has no head");
  }
  if (era_id < 0 || era_id >= model.config.n_eras) {
    throw DataError("era id " + std::to_string(era_id) + " outside [0, " + std::to_string(model.config.n_eras) + ")");
  }
  Tensor h = x;
  GateWeights gates;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (l == 0 || model.routers.size() > 1) gates = model_route(model, dataset_id, era_id, l);
    h = tea_forward(model.layers[l], h, gates.task, gates.era, ctx);
    if (l + 1 < model.layers.size()) h = relu(h);
  }
  const auto& head = model.heads[static_cast<std::size_t>(dataset_id)];
  return add_row(matmul(h, transpose(head.weight)), head.bias);
}

Tensor forward(const AdaptedModel& model, const Tensor& x, std::span<const int> dataset_ids,
               std::span<const int> era_ids, const ForwardContext& ctx) {
  if (dataset_ids.empty() || dataset_ids.size() != era_ids.size() ||
      static_cast<Index>(dataset_ids.size()) != x.dim(0)) {
    throw DimensionError("forward: metadata length does not match batch " + shape_str(x.shape()));
  }
  for (std::size_t i = 1; i < dataset_ids.size(); ++i) {
    if (dataset_ids[i] != dataset_ids[0] || era_ids[i] != era_ids[0]) {
      throw ContractError("forward: batch mixes (task, era) metadata at sample " + std::to_string(i) +
                          "; regroup batches by (task, era) before calling forward");
    }
  }
  return forward(model, x, dataset_ids[0], era_ids[0], ctx);
}

std::vector<Tensor> trainable_parameters(const AdaptedModel& model) {
  std::vector<Tensor> params;
  for (const auto& layer : model.layers) {
    for (const auto& e : layer.experts) {
      params.push_back(e.A);
      params.push_back(e.B);
    }
  }
  for (const auto& router : model.routers) {
    for (auto& t : active_parameters(router, model.config.mode)) params.push_back(t);
  }
  for (const auto& head : model.heads) {
    params.push_back(head.weight);
    params.push_back(head.bias);
  }
  return params;
}

std::vector<NamedTensor> named_tensors(const AdaptedModel& model) {
  std::vector<NamedTensor> out;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    out.push_back({prefix + "base.W0", layer.base.weight});
    if (layer.base.bias) out.push_back({prefix + "base.bias", *layer.base.bias});
    for (std::size_t i = 0; i < layer.experts.size(); ++i) {
      const std::string e = prefix + "expert" + std::to_string(i) + ".";
      out.push_back({e + "A", layer.experts[i].A});
      out.push_back({e + "B", layer.experts[i].B});
    }
  }
  for (std::size_t r = 0; r < model.routers.size(); ++r) {
    const auto& p = model.routers[r];
    const std::string prefix = model.routers.size() == 1 ? "router." : "router" + std::to_string(r) + ".";
    out.push_back({prefix + "V_t", p.task_embedding});
    out.push_back({prefix + "V_e", p.era_embedding});
    out.push_back({prefix + "W_T", p.task_proj});
    out.push_back({prefix + "W_E", p.era_proj});
    out.push_back({prefix + "M1", p.concat_hidden});
    out.push_back({prefix + "M2", p.concat_out});
  }
  for (std::size_t t = 0; t < model.heads.size(); ++t) {
    const std::string prefix = "head" + std::to_string(t) + ".";
    out.push_back({prefix + "W", model.heads[t].weight});
    out.push_back({prefix + "b", model.heads[t].bias});
  }
  return out;
}

FrozenSnapshot snapshot_frozen(const AdaptedModel& model) {
  FrozenSnapshot snap;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& base = model.layers[l].base;
    const std::string prefix = "layer" + std::to_string(l) + ".base.";
    snap.emplace(prefix + "W0", base.weight.value());
    if (base.bias) snap.emplace(prefix + "bias", base.bias->value());
  }
  return snap;
}

bool freeze_check(const AdaptedModel& model, const FrozenSnapshot& snapshot) {
  FrozenSnapshot now = snapshot_frozen(model);
  if (now.size() != snapshot.size()) return false;
  for (const auto& [name, m] : now) {
    auto it = snapshot.find(name);
    if (it == snapshot.end()) return false;
    const Matrix& old = it->second;
    if (old.rows() != m.rows() || old.cols() != m.cols()) return false;
    if (std::memcmp(old.data(), m.data(), sizeof(double) * static_cast<std::size_t>(m.size())) != 0) return false;
  }
  for (const auto& layer : model.layers) {
    if (layer.base.weight.requires_grad() || layer.base.weight.has_grad()) return false;
  }
  return true;
}

}  // namespace teamoe
