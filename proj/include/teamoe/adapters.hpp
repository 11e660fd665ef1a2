// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapter layers over a frozen linear map: plain LoRA, MoELoRA with
// a task weight per expert, and the task/era-gated variant where the era
// weight modulates each expert's down-projection and the task weight scales
// its up-projection.
//
// Convention: A down-projects d_in -> r_e, B up-projects r_e -> d_out, and
// every product is written row-wise, h = x W0^T + ... for x of shape
// [batch x d_in].

#pragma once

#include "teamoe/ops.hpp"
#include "teamoe/random.hpp"

#include <optional>
#include <vector>

namespace teamoe {

struct FrozenLinear {
  Tensor weight;               // W0 [d_out x d_in], never trainable
  std::optional<Tensor> bias;  // [d_out]

  Index d_in() const { return weight.dim(1); }
  Index d_out() const { return weight.dim(0); }
};

FrozenLinear make_frozen_linear(Index d_in, Index d_out, bool with_bias, Rng& rng);

/// x W0^T (+ bias).
Tensor frozen_forward(const FrozenLinear& base, const Tensor& x);

struct ExpertParams {
  Tensor A;  // [r_e x d_in]
  Tensor B;  // [d_out x r_e]

  Index rank() const { return A.dim(0); }
};

struct TeaAdapterLayer {
  FrozenLinear base;
  std::vector<ExpertParams> experts;
  double lambda = 1.0;
  double dropout_rate = 0.0;

  Index n_experts() const { return static_cast<Index>(experts.size()); }
  Index expert_rank() const { return experts.front().rank(); }
  Index total_rank() const { return n_experts() * expert_rank(); }
  Index d_in() const { return base.d_in(); }
  Index d_out() const { return base.d_out(); }
};

struct AdapterOptions {
  Index rank = 16;
  Index n_experts = 8;
  std::optional<double> alpha;  // lambda = alpha / rank; defaults to alpha = rank
  double dropout_rate = 0.05;
};

/// Splits `rank` evenly across `n_experts`; A ~ N(0, 1/d_in), B = 0.
/// Throws ConfigError unless rank is a positive multiple of n_experts.
TeaAdapterLayer make_tea_layer(FrozenLinear base, const AdapterOptions& options, Rng& rng);

void validate(const TeaAdapterLayer& layer);

/// Randomness for one forward call. Dropout draws from `rng` only in training.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
};

/// x W0^T + lambda (x A^T) B^T for a single-expert layer.
Tensor lora_forward(const TeaAdapterLayer& layer, const Tensor& x, const ForwardContext& ctx = {});

/// x W0^T + lambda sum_i omega_i (x A_i^T) B_i^T.
Tensor moelora_forward(const TeaAdapterLayer& layer, const Tensor& x, const Tensor& omega,
                       const ForwardContext& ctx = {});

/// x W0^T + sum_i w_t[i] lambda ((Dropout(x) A_i^T) w_e[i]) B_i^T.
///
/// One dropout mask is drawn per call and shared by every expert.
Tensor tea_forward(const TeaAdapterLayer& layer, const Tensor& x, const Tensor& w_t, const Tensor& w_e,
                   const ForwardContext& ctx = {});

/// Trainable adapter parameters: r (d_in + d_out) for any expert count.
Index trainable_param_count(const TeaAdapterLayer& layer);

}  // namespace teamoe
