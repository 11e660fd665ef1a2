// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "teamoe/adapters.hpp"

#include <cmath>
#include <string>

namespace teamoe {

namespace {

void check_input(const TeaAdapterLayer& layer, const Tensor& x, const char* op) {
  if (x.rank() != 2 || x.dim(1) != layer.d_in()) {
    throw DimensionError(std::string(op) + ": input " + shape_str(x.shape()) + " does not match d_in=" +
                         std::to_string(layer.d_in()));
  }
}

void check_weights(const TeaAdapterLayer& layer, const Tensor& w, const char* what) {
  if (w.rank() != 1 || w.dim(0) != layer.n_experts()) {
    throw ContractError(std::string(what) + " has shape " + shape_str(w.shape()) + ", expected [" +
                        std::to_string(layer.n_experts()) + "]");
  }
  if (!w.value().allFinite()) throw ContractError(std::string(what) + " contains non-finite values");
}

Tensor maybe_dropout(const TeaAdapterLayer& layer, const Tensor& x, const ForwardContext& ctx) {
  if (!ctx.training || layer.dropout_rate == 0.0) return x;
  if (ctx.rng == nullptr) throw ContractError("training-mode forward with dropout needs an rng");
  return dropout(x, layer.dropout_rate, true, *ctx.rng);
}

// (x A^T) B^T for one expert.
Tensor expert_delta(const ExpertParams& e, const Tensor& x) {
  return matmul(matmul(x, transpose(e.A)), transpose(e.B));
}

}  // namespace

FrozenLinear make_frozen_linear(Index d_in, Index d_out, bool with_bias, Rng& rng) {
  FrozenLinear base;
  base.weight = randn<double>({d_out, d_in}, rng, 1.0 / std::sqrt(static_cast<double>(d_in)), false);
  if (with_bias) base.bias = randn<double>({d_out}, rng, 0.1, false);
  return base;
}

Tensor frozen_forward(const FrozenLinear& base, const Tensor& x) {
  Tensor h = matmul(x, transpose(base.weight));
  if (base.bias) h = add_row(h, *base.bias);
  return h;
}

TeaAdapterLayer make_tea_layer(FrozenLinear base, const AdapterOptions& options, Rng& rng) {
  if (options.n_experts < 1) throw ConfigError("n_experts must be >= 1");
  if (options.rank < 1) throw ConfigError("rank must be >= 1");
  if (options.rank % options.n_experts != 0) {
    throw ConfigError("rank " + std::to_string(options.rank) + " is not divisible by n_experts " +
                      std::to_string(options.n_experts));
  }
  const double alpha = options.alpha.value_or(static_cast<double>(options.rank));
  if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");

  TeaAdapterLayer layer;
  layer.lambda = alpha / static_cast<double>(options.rank);
  layer.dropout_rate = options.dropout_rate;
  const Index r_e = options.rank / options.n_experts;
  const double a_std = 1.0 / std::sqrt(static_cast<double>(base.d_in()));
  for (Index i = 0; i < options.n_experts; ++i) {
    ExpertParams e;
    e.A = randn<double>({r_e, base.d_in()}, rng, a_std, true);
    e.B = Tensor::zeros({base.d_out(), r_e}, true);
    layer.experts.push_back(std::move(e));
  }
  layer.base = std::move(base);
  validate(layer);
  return layer;
}

void validate(const TeaAdapterLayer& layer) {
  if (layer.experts.empty()) throw ContractError("adapter layer has no experts");
  if (layer.base.weight.requires_grad()) throw ContractError("frozen base weight must not require gradient");
  if (!(layer.dropout_rate >= 0.0 && layer.dropout_rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1)");
  }
  const Shape a_shape = layer.experts.front().A.shape();
  const Shape b_shape = layer.experts.front().B.shape();
  if (a_shape.size() != 2 || a_shape[1] != layer.d_in() || b_shape.size() != 2 || b_shape[0] != layer.d_out() ||
      b_shape[1] != a_shape[0]) {
    throw DimensionError("expert shapes A" + shape_str(a_shape) + " B" + shape_str(b_shape) +
                         " do not fit base " + shape_str(layer.base.weight.shape()));
  }
  for (const auto& e : layer.experts) {
    if (e.A.shape() != a_shape || e.B.shape() != b_shape) throw DimensionError("experts differ in shape");
  }
}

Tensor lora_forward(const TeaAdapterLayer& layer, const Tensor& x, const ForwardContext& ctx) {
  if (layer.n_experts() != 1) {
    throw ContractError("lora_forward needs exactly one expert, layer has " + std::to_string(layer.n_experts()));
  }
  check_input(layer, x, "lora_forward");
  Tensor h0 = frozen_forward(layer.base, x);
  Tensor xd = maybe_dropout(layer, x, ctx);
  return add(h0, scale(expert_delta(layer.experts.front(), xd), layer.lambda));
}

Tensor moelora_forward(const TeaAdapterLayer& layer, const Tensor& x, const Tensor& omega,
                       const ForwardContext& ctx) {
  check_input(layer, x, "moelora_forward");
  if (omega.rank() != 1 || omega.dim(0) != layer.n_experts()) {
    throw DimensionError("moelora_forward: omega " + shape_str(omega.shape()) + " for " +
                         std::to_string(layer.n_experts()) + " experts");
  }
  Tensor h = frozen_forward(layer.base, x);
  Tensor xd = maybe_dropout(layer, x, ctx);
  for (Index i = 0; i < layer.n_experts(); ++i) {
    const auto& e = layer.experts[static_cast<std::size_t>(i)];
    Tensor delta = mul_scalar(expert_delta(e, xd), select(omega, i));
    h = add(h, scale(delta, layer.lambda));
  }
  return h;
}

Tensor tea_forward(const TeaAdapterLayer& layer, const Tensor& x, const Tensor& w_t, const Tensor& w_e,
                   const ForwardContext& ctx) {
  check_input(layer, x, "tea_forward");
  check_weights(layer, w_t, "task weights");
  check_weights(layer, w_e, "era weights");
  Tensor h = frozen_forward(layer.base, x);
  Tensor xd = maybe_dropout(layer, x, ctx);
  for (Index i = 0; i < layer.n_experts(); ++i) {
    const auto& e = layer.experts[static_cast<std::size_t>(i)];
    Tensor a = matmul(xd, transpose(e.A));
    Tensor a_mod = mul_scalar(a, select(w_e, i));
    Tensor b = matmul(a_mod, transpose(e.B));
    Tensor b_hat = mul_scalar(scale(b, layer.lambda), select(w_t, i));
    h = add(h, b_hat);
  }
  return h;
}

Index trainable_param_count(const TeaAdapterLayer& layer) {
  Index count = 0;
  for (const auto& e : layer.experts) count += e.A.numel() + e.B.numel();
  return count;
}

}  // namespace teamoe
