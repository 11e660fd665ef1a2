// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "teamoe/config.hpp"
#include "teamoe/ops.hpp"
#include "teamoe/training.hpp"

#include "doctest.h"

#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace teamoe;

namespace {

RunConfig small_run(std::uint64_t seed = 0) {
  RunConfig rc;
  rc.train_per_cell = 60;
  rc.dev_per_cell = 30;
  rc.test_per_cell = 30;
  rc.epochs = 4;
  rc.seed = seed;
  return rc;
}

std::vector<Matrix> values(const std::vector<Tensor>& ts) {
  std::vector<Matrix> out;
  for (const auto& t : ts) out.push_back(t.value());
  return out;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("optimizer kinds parse") {
  CHECK(parse_optimizer("adam") == OptimizerKind::Adam);
  CHECK(parse_optimizer("sgd") == OptimizerKind::Sgd);
  CHECK_THROWS_AS(parse_optimizer("rmsprop"), ConfigError);
}

TEST_CASE("train config validation") {
  TrainConfig tc = train_config(RunConfig{});
  CHECK_NOTHROW(validate(tc));
  tc.learning_rate = -1.0;
  CHECK_THROWS_AS(validate(tc), ConfigError);
  tc = train_config(RunConfig{});
  tc.batch_size = 0;
  CHECK_THROWS_AS(validate(tc), ConfigError);
  tc = train_config(RunConfig{});
  tc.model.adapter.n_experts = 3;
  CHECK_THROWS_AS(validate(tc), ConfigError);
}

TEST_CASE("SGD and Adam single steps against hand-computed updates") {
  TrainConfig tc;
  tc.learning_rate = 0.1;
  tc.optimizer = OptimizerKind::Sgd;
  Tensor p = Tensor::from_data({2}, {1.0, -2.0}, true);
  Optimizer sgd({p}, tc);
  backward(sum(mul(p, p)));
  sgd.step();
  CHECK(p.to_vector() == std::vector<double>{1.0 - 0.1 * 2.0, -2.0 - 0.1 * -4.0});

  tc.optimizer = OptimizerKind::Adam;
  Tensor q = Tensor::from_data({2}, {1.0, -2.0}, true);
  Optimizer adam({q}, tc);
  backward(sum(mul(q, q)));
  adam.step();
  // First bias-corrected Adam step is lr * g / (|g| + eps).
  const double g0 = 2.0, g1 = -4.0;
  CHECK(std::abs(q.at(0) - (1.0 - 0.1 * g0 / (std::abs(g0) + 1e-8))) < 1e-15);
  CHECK(std::abs(q.at(1) - (-2.0 - 0.1 * g1 / (std::abs(g1) + 1e-8))) < 1e-15);
  CHECK(adam.steps() == 1);

  adam.zero_grad();
  CHECK_FALSE(q.has_grad());
  const auto before = q.to_vector();
  adam.step();  // no gradient: parameter is skipped
  CHECK(q.to_vector() == before);
}

TEST_CASE("joint_loss examples") {
  const RunConfig rc = small_run();
  const Dataset data = generate(synth_spec(rc));
  const TrainConfig tc = train_config(rc);
  AdaptedModel model = make_model(tc.model, 3);
  const auto batches = group_batches(data.train, 4);

  SUBCASE("uniform logits give ln C") {
    for (auto& h : model.heads) {
      h.weight.mutable_value().setZero();
      h.bias.mutable_value().setZero();
    }
    for (const auto& b : batches) {
      const double classes = static_cast<double>(rc.n_classes[static_cast<std::size_t>(b.task_id)]);
      CHECK(std::abs(joint_loss(model, data.train, b).item() - std::log(classes)) < 1e-15);
    }
  }
  SUBCASE("large correct logits drive the loss to zero") {
    const Tensor logits = Tensor::from_data({2, 3}, {50, 0, 0, 0, 0, 50});
    const std::vector<int> labels{0, 2};
    CHECK(cross_entropy(logits, labels).item() < 1e-20);
  }
  SUBCASE("matches an independent cross-entropy evaluation") {
    Rng rng(4);
    for (auto& layer : model.layers) {
      for (auto& e : layer.experts) e.B.mutable_value() = randn<double>(e.B.shape(), rng, 0.5, false).value();
    }
    for (const auto& b : batches) {
      const Matrix logits = forward(model, batch_features(data.train, b), b.task_id, b.era_id).value();
      const auto labels = batch_labels(data.train, b);
      double expected = 0.0;
      for (Index i = 0; i < logits.rows(); ++i) {
        double z = 0.0;
        for (Index c = 0; c < logits.cols(); ++c) z += std::exp(logits(i, c));
        expected += std::log(z) - logits(i, labels[static_cast<std::size_t>(i)]);
      }
      expected /= static_cast<double>(logits.rows());
      CHECK(std::abs(joint_loss(model, data.train, b).item() - expected) <= 1e-10);
    }
  }
  SUBCASE("bad labels are data errors") {
    std::vector<Sample> broken(data.train.begin(), data.train.end());
    broken[batches[0].indices[0]].label = 7;
    CHECK_THROWS_AS(joint_loss(model, broken, batches[0]), DataError);
  }
}

TEST_CASE("learning rate zero leaves every parameter bit-identical") {
  RunConfig rc = small_run(1);
  rc.learning_rate = 0.0;
  const TrainConfig tc = train_config(rc);
  const AdaptedModel init = make_model(tc.model, derive_seed(tc.seed, seed_stream::kInit));
  const RunResult r = train(tc, generate(synth_spec(rc)));
  const auto a = named_tensors(init);
  const auto b = named_tensors(r.model);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CAPTURE(a[i].name);
    CHECK(a[i].tensor.value() == b[i].tensor.value());
  }
}

TEST_CASE("conflict 0 is learned to over 90% dev accuracy on every cell in every mode") {
  RunConfig rc;
  rc.conflict = 0.0;
  rc.seed = 2;
  const Dataset data = generate(synth_spec(rc));
  const TrainConfig base = train_config(rc);
  const TaskGranularity fine = fine_granularity(rc);
  for (RoutingMode mode : {RoutingMode::SeparateGates, RoutingMode::ConcatSingleGate, RoutingMode::TaskOnly,
                           RoutingMode::EraOnly, RoutingMode::NoMoE}) {
    CAPTURE(to_string(mode));
    const RunResult r = train(variant_config(base, {mode, fine}, fine), data);
    REQUIRE(r.dev.cells.size() == 8);
    for (const auto& c : r.dev.cells) CHECK(c.accuracy > 0.9);

    int non_increasing = 0;
    for (std::size_t e = 1; e < r.epoch_train_loss.size(); ++e) {
      non_increasing += r.epoch_train_loss[e] <= r.epoch_train_loss[e - 1];
    }
    CHECK(non_increasing >= static_cast<int>(0.9 * static_cast<double>(r.epoch_train_loss.size() - 1)));
  }
}

TEST_CASE("first-batch loss does not depend on the routing mode") {
  const RunConfig rc = small_run(5);
  const Dataset data = generate(synth_spec(rc));
  const TrainConfig base = train_config(rc);
  const TaskGranularity fine = fine_granularity(rc);
  std::vector<double> first;
  for (RoutingMode mode : {RoutingMode::SeparateGates, RoutingMode::ConcatSingleGate, RoutingMode::TaskOnly,
                           RoutingMode::EraOnly, RoutingMode::NoMoE}) {
    first.push_back(train(variant_config(base, {mode, fine}, fine), data).step_loss.front());
  }
  for (double v : first) CHECK(v == first.front());
}

TEST_CASE("one step touches exactly the active trainable set") {
  const RunConfig rc = small_run(6);
  const Dataset data = generate(synth_spec(rc));
  TrainConfig tc = train_config(rc);
  tc.model.mode = RoutingMode::TaskOnly;
  AdaptedModel m = make_model(tc.model, 7);
  Rng rng(8);
  for (auto& layer : m.layers) {
    for (auto& e : layer.experts) e.B.mutable_value() = randn<double>(e.B.shape(), rng, 0.5, false).value();
  }
  const auto named_before = named_tensors(m);
  std::vector<Matrix> before;
  for (const auto& nt : named_before) before.push_back(nt.tensor.value());

  Optimizer opt(trainable_parameters(m), tc);
  const auto batches = group_batches(data.train, 16);
  const Batch& b = *std::find_if(batches.begin(), batches.end(), [](const Batch& c) { return c.task_id == 1; });
  REQUIRE(b.task_id == 1);
  backward(joint_loss(m, data.train, b));
  opt.step();

  std::set<std::string> moved;
  const auto named_after = named_tensors(m);
  for (std::size_t i = 0; i < named_after.size(); ++i) {
    if (named_after[i].tensor.value() != before[i]) moved.insert(named_after[i].name);
  }
  std::set<std::string> expected{"router.V_t", "router.W_T", "head1.W", "head1.b"};
  for (int l = 0; l < 2; ++l) {
    for (int e = 0; e < 8; ++e) {
      expected.insert("layer" + std::to_string(l) + ".expert" + std::to_string(e) + ".A");
      expected.insert("layer" + std::to_string(l) + ".expert" + std::to_string(e) + ".B");
    }
  }
  CHECK(moved == expected);
}

TEST_CASE("train rejects incomplete data and reports divergence") {
  RunConfig rc = small_run(7);
  Dataset data = generate(synth_spec(rc));
  Dataset partial = data;
  std::erase_if(partial.train, [](const Sample& s) { return s.task_id == 2 && s.era_id == 1; });
  CHECK_THROWS_AS(train(train_config(rc), partial), ContractError);

  rc.optimizer = OptimizerKind::Sgd;
  rc.learning_rate = 1e200;
  try {
    train(train_config(rc), data);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("determinism: same config and seed give identical results and CSVs") {
  const RunConfig rc = small_run(8);
  auto once = [&] {
    const RunResult r = train(train_config(rc), generate(synth_spec(rc)));
    std::ostringstream os;
    write_metrics_csv(os, r);
    return std::make_pair(r.step_loss, os.str());
  };
  const auto a = once();
  const auto b = once();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("metrics CSV schema") {
  const RunConfig rc = small_run(9);
  const RunResult r = train(train_config(rc), generate(synth_spec(rc)));
  std::ostringstream os;
  write_metrics_csv(os, r);
  const std::string text = os.str();
  CHECK(text.find('\r') == std::string::npos);
  const auto rows = lines(text);
  REQUIRE(!rows.empty());
  CHECK(rows[0] == "variant,cell,metric,value");
  std::set<std::string> metrics;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::stringstream ss(rows[i]);
    std::string variant, cell, metric, value;
    std::getline(ss, variant, ',');
    std::getline(ss, cell, ',');
    std::getline(ss, metric, ',');
    std::getline(ss, value, ',');
    metrics.insert(metric);
    std::size_t used = 0;
    std::stod(value, &used);
    CHECK(used == value.size());
    CHECK(value.find(' ') == std::string::npos);
  }
  for (const char* m : {"train_loss_epoch0", "dev_accuracy", "test_accuracy", "dev_loss", "test_loss"}) {
    CHECK(metrics.count(m) == 1);
  }
  CHECK(r.test.cells.size() == 8);
  CHECK(r.dev_history.size() == static_cast<std::size_t>(rc.epochs));
}

TEST_CASE("ablation suite") {
  RunConfig rc = small_run(10);
  rc.epochs = 2;
  const Dataset data = generate(synth_spec(rc));
  const TrainConfig base = train_config(rc);
  const TaskGranularity coarse = coarse_granularity(rc);
  const TaskGranularity fine = fine_granularity(rc);
  const auto grid = default_ablation_grid(coarse, fine);
  REQUIRE(grid.size() == 8);

  const auto rows = run_ablation_suite(base, grid, fine, data);
  CHECK(rows.size() == grid.size());
  CHECK(rows[0].variant.mode == RoutingMode::NoMoE);

  // The NoMoE row equals an independently launched single-LoRA run.
  TrainConfig single = base;
  single.model.mode = RoutingMode::NoMoE;
  single.model.adapter.n_experts = 1;
  const RunResult replay = train(single, data);
  CHECK(replay.step_loss == rows[0].result.step_loss);
  CHECK(replay.test.mean_accuracy() == rows[0].result.test.mean_accuracy());

  // Parallel execution gives the same numbers.
  const auto parallel = run_ablation_suite(base, grid, fine, data, 4);
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(parallel[i].result.step_loss == rows[i].result.step_loss);

  std::ostringstream os;
  write_ablation_csv(os, rows);
  const auto out = lines(os.str());
  CHECK(out[0] == "variant,granularity,cell,accuracy,loss");
  std::set<std::pair<std::string, std::string>> variants;
  for (std::size_t i = 1; i < out.size(); ++i) {
    std::stringstream ss(out[i]);
    std::string v, g;
    std::getline(ss, v, ',');
    std::getline(ss, g, ',');
    variants.emplace(v, g);
  }
  CHECK(variants.size() == 8);
  CHECK(variants.count({"no-moe", "n/a"}) == 1);
  CHECK(variants.count({"concat", "coarse"}) == 1);
}

TEST_CASE("per-cell baseline trains one model per (task, era)") {
  RunConfig rc = small_run(11);
  rc.epochs = 2;
  const RunResult r = train_per_cell(train_config(rc), generate(synth_spec(rc)));
  CHECK(r.test.cells.size() == 8);
  std::set<std::pair<int, int>> cells;
  for (const auto& c : r.test.cells) cells.emplace(c.task_id, c.era_id);
  CHECK(cells.size() == 8);
}
