// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "teamoe/backbone.hpp"
#include "teamoe/gradcheck.hpp"
#include "teamoe/ops.hpp"

#include "doctest.h"

#include <cmath>
#include <set>
#include <string>
#include <vector>

using namespace teamoe;

namespace {

ModelConfig small_config(RoutingMode mode = RoutingMode::SeparateGates, Index n_experts = 4) {
  ModelConfig c;
  c.backbone = {6, 8, 2, {2, 3, 2, 3}};
  c.adapter = {8, n_experts, std::nullopt, 0.0};
  c.n_eras = 2;
  c.d_task = 4;
  c.d_era = 4;
  c.d_hidden = 8;
  c.mode = mode;
  c.granularity = TaskGranularity::fine(4);
  return c;
}

void randomize_b(AdaptedModel& model, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& layer : model.layers) {
    for (auto& e : layer.experts) e.B.mutable_value() = randn<double>(e.B.shape(), rng, 0.5, false).value();
  }
}

}  // namespace

TEST_CASE("model structure") {
  const AdaptedModel m = make_model(small_config(), 1);
  CHECK(m.layers.size() == 2);
  CHECK(m.routers.size() == 1);
  CHECK(m.heads.size() == 4);
  CHECK(m.layers[0].d_in() == 6);
  CHECK(m.layers[0].d_out() == 8);
  CHECK(m.layers[1].d_in() == 8);
  for (const auto& layer : m.layers) CHECK_FALSE(layer.base.weight.requires_grad());

  ModelConfig per_layer = small_config();
  per_layer.per_layer_router = true;
  CHECK(make_model(per_layer, 1).routers.size() == 2);
}

TEST_CASE("model config validation") {
  ModelConfig c = small_config();
  c.backbone.head_widths.clear();
  CHECK_THROWS_AS(make_model(c, 1), ConfigError);
  c = small_config();
  c.granularity = TaskGranularity::fine(3);
  CHECK_THROWS_AS(make_model(c, 1), ConfigError);
  c = small_config(RoutingMode::NoMoE, 4);
  CHECK_THROWS_AS(make_model(c, 1), ConfigError);
  c = small_config();
  c.backbone.depth = 0;
  CHECK_THROWS_AS(make_model(c, 1), ConfigError);
}

TEST_CASE("output shape equals the head width for every batch size") {
  const AdaptedModel m = make_model(small_config(), 2);
  Rng rng(3);
  for (Index batch : {1, 5, 17}) {
    const Tensor x = randn<double>({batch, 6}, rng, 1.0, false);
    for (int t = 0; t < 4; ++t) CHECK(forward(m, x, t, 1).shape() == Shape{batch, m.config.backbone.head_widths[t]});
  }
}

TEST_CASE("zero-init adapters leave the frozen function unchanged for every (task, era) and mode") {
  Rng rng(4);
  const Tensor x = randn<double>({5, 6}, rng, 1.0, false);
  const AdaptedModel ref = make_model(small_config(RoutingMode::SeparateGates), 9);

  // Independent frozen-backbone oracle: relu between base layers, then the head.
  auto oracle = [&](int task) {
    Matrix h = x.value();
    for (std::size_t l = 0; l < ref.layers.size(); ++l) {
      const auto& layer = ref.layers[l];
      Matrix z = h * layer.base.weight.value().transpose();
      if (layer.base.bias) z.rowwise() += layer.base.bias->value().row(0);
      h = l + 1 < ref.layers.size() ? Matrix(z.cwiseMax(0.0)) : z;
    }
    Matrix out = h * ref.heads[task].weight.value().transpose();
    out.rowwise() += ref.heads[task].bias.value().row(0);
    return out;
  };

  for (RoutingMode mode : {RoutingMode::SeparateGates, RoutingMode::ConcatSingleGate, RoutingMode::TaskOnly,
                           RoutingMode::EraOnly, RoutingMode::NoMoE}) {
    const AdaptedModel m = make_model(small_config(mode, mode == RoutingMode::NoMoE ? 1 : 4), 9);
    for (int t = 0; t < 4; ++t) {
      for (int e = 0; e < 2; ++e) {
        CHECK((forward(m, x, t, e).value() - oracle(t)).cwiseAbs().maxCoeff() <= 1e-12);
      }
    }
  }
}

TEST_CASE("backbone and heads are shared across modes and expert counts under one seed") {
  const AdaptedModel a = make_model(small_config(RoutingMode::SeparateGates, 4), 5);
  const AdaptedModel b = make_model(small_config(RoutingMode::NoMoE, 1), 5);
  for (std::size_t l = 0; l < a.layers.size(); ++l) CHECK(a.layers[l].base.weight.value() == b.layers[l].base.weight.value());
  for (std::size_t t = 0; t < a.heads.size(); ++t) CHECK(a.heads[t].weight.value() == b.heads[t].weight.value());
}

TEST_CASE("NoMoE equals SeparateGates at N=1") {
  AdaptedModel no_moe = make_model(small_config(RoutingMode::NoMoE, 1), 7);
  AdaptedModel gated = make_model(small_config(RoutingMode::SeparateGates, 1), 7);
  randomize_b(no_moe, 8);
  randomize_b(gated, 8);
  Rng rng(9);
  const Tensor x = randn<double>({4, 6}, rng, 1.0, false);
  for (int t = 0; t < 4; ++t) {
    CHECK((forward(no_moe, x, t, 1).value() - forward(gated, x, t, 1).value()).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("mixed-metadata batches are rejected") {
  const AdaptedModel m = make_model(small_config(), 1);
  const Tensor x = Tensor::zeros({2, 6});
  const std::vector<int> tasks{0, 1};
  const std::vector<int> eras{0, 0};
  try {
    forward(m, x, tasks, eras);
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("regroup") != std::string::npos);
  }
  const std::vector<int> same_t{2, 2};
  const std::vector<int> same_e{1, 1};
  CHECK(forward(m, x, same_t, same_e).value() == forward(m, x, 2, 1).value());
  CHECK_THROWS(forward(m, x, 4, 0));
  CHECK_THROWS(forward(m, x, 0, 2));
}

TEST_CASE("trainable and named tensors") {
  const AdaptedModel m = make_model(small_config(), 1);
  const auto params = trainable_parameters(m);
  for (const auto& p : params) CHECK(p.requires_grad());
  // 2 layers x 4 experts x {A, B} + {V_t, V_e, W_T, W_E} + 4 heads x {W, b}
  CHECK(params.size() == 16 + 4 + 8);

  std::set<std::string> names;
  for (const auto& nt : named_tensors(m)) names.insert(nt.name);
  for (const char* expected : {"layer0.base.W0", "layer1.base.bias", "layer0.expert3.A", "layer1.expert0.B",
                               "router.V_t", "router.V_e", "router.W_T", "router.W_E", "router.M1", "router.M2",
                               "head3.W", "head0.b"}) {
    CHECK(names.count(expected) == 1);
  }

  ModelConfig concat = small_config(RoutingMode::ConcatSingleGate);
  CHECK(trainable_parameters(make_model(concat, 1)).size() == 16 + 4 + 8);
  ModelConfig task_only = small_config(RoutingMode::TaskOnly);
  CHECK(trainable_parameters(make_model(task_only, 1)).size() == 16 + 2 + 8);
}

TEST_CASE("freeze_check") {
  AdaptedModel m = make_model(small_config(), 1);
  const FrozenSnapshot snap = snapshot_frozen(m);
  CHECK(freeze_check(m, snap));
  randomize_b(m, 3);
  CHECK(freeze_check(m, snap));
  double& w = m.layers[1].base.weight.mutable_value()(0, 0);
  w = std::nextafter(w, 1e9);  // one ulp
  CHECK_FALSE(freeze_check(m, snap));
}

TEST_CASE("full model gradients match finite differences") {
  for (RoutingMode mode : {RoutingMode::SeparateGates, RoutingMode::ConcatSingleGate}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      CAPTURE(seed);
      ModelConfig c = small_config(mode);
      c.adapter.dropout_rate = 0.2;
      AdaptedModel m = make_model(c, seed);
      randomize_b(m, seed + 100);
      Rng rng(seed + 200);
      const Tensor x = randn<double>({4, 6}, rng, 1.0, false);
      const std::vector<int> labels{0, 2, 1, 2};
      auto loss = [&] {
        Rng mask(seed);
        return cross_entropy(forward(m, x, 1, 1, {true, &mask}), labels);
      };
      auto params = trainable_parameters(m);
      for (auto& p : params) p.zero_grad();
      backward(loss());
      for (const auto& p : params) {
        if (!p.has_grad()) continue;  // heads of other tasks
        const Matrix numeric = finite_diff_grad<double>([&](const Tensor&) { return loss().item(); }, p, 1e-5);
        CHECK(max_relative_error(Matrix(p.grad()), numeric) <= 1e-5);
      }
    }
  }
}

TEST_CASE("untrained backbone is affine in its input") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CAPTURE(seed);
    const AdaptedModel m = make_model(small_config(), seed);
    Rng rng(seed + 50);
    const Tensor x = randn<double>({3, 6}, rng, 1.0, false);
    const Tensor y = randn<double>({3, 6}, rng, 1.0, false);
    for (double alpha : {-0.5, 0.25, 2.0}) {
      const Tensor mix = Tensor::from_matrix(alpha * x.value() + (1.0 - alpha) * y.value());
      const Matrix expected = alpha * forward(m, x, 1, 0).value() + (1.0 - alpha) * forward(m, y, 1, 0).value();
      CHECK((forward(m, mix, 1, 0).value() - expected).cwiseAbs().maxCoeff() <= 1e-12);
    }
    // Sign pairing below the rectifier: rows [P; -P] with orthonormal P.
    const Matrix& w = m.layers[0].base.weight.value();
    CHECK((w.topRows(4) + w.bottomRows(4)).cwiseAbs().maxCoeff() == 0.0);
    const Matrix& top = w.topRows(4);
    CHECK((top * top.transpose() - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-12);
  }
}
