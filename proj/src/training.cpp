// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "teamoe/training.hpp"

#include "teamoe/format.hpp"

#include <chrono>
#include <cmath>
#include <future>
#include <map>
#include <ostream>
#include <set>

namespace teamoe {

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "adam") return OptimizerKind::Adam;
  if (text == "sgd") return OptimizerKind::Sgd;
  throw ConfigError("unknown optimizer '" + std::string(text) + "' (expected sgd or adam)");
}

std::string_view to_string(LrSchedule schedule) { return schedule == LrSchedule::Cosine ? "cosine" : "constant"; }

LrSchedule parse_lr_schedule(std::string_view text) {
  if (text == "cosine") return LrSchedule::Cosine;
  if (text == "constant") return LrSchedule::Constant;
  throw ConfigError("unknown lr_schedule '" + std::string(text) + "' (expected constant or cosine)");
}

double scheduled_learning_rate(double base, LrSchedule schedule, std::uint64_t step, std::uint64_t total_steps) {
  if (schedule == LrSchedule::Constant || total_steps == 0) return base;
  constexpr double kPi = 3.14159265358979323846;
  return base * 0.5 * (1.0 + std::cos(kPi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

void validate(const TrainConfig& c) {
  validate(c.model);
  if (c.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) {
    throw ConfigError("learning_rate must be finite and >= 0");
  }
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(c.eps > 0.0)) throw ConfigError("adam eps must be positive");
}

// -- optimizer ---------------------------------------------------------------

Optimizer::Optimizer(std::vector<Tensor> params, const TrainConfig& config)
    : params_(std::move(params)),
      kind_(config.optimizer),
      lr_(config.learning_rate),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.eps) {
  for (const auto& p : params_) {
    if (!p.requires_grad()) throw ContractError("optimizer given a tensor that does not require gradient");
    m_.push_back(Matrix::Zero(p.value().rows(), p.value().cols()));
    v_.push_back(Matrix::Zero(p.value().rows(), p.value().cols()));
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Optimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    const Matrix& g = p.grad();
    if (kind_ == OptimizerKind::Sgd) {
      p.mutable_value() -= lr_ * g;
      continue;
    }
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    p.mutable_value().array() -= lr_ * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
  }
}

// -- loss and evaluation -----------------------------------------------------

Tensor joint_loss(const AdaptedModel& model, std::span<const Sample> samples, const Batch& batch,
                  const ForwardContext& ctx) {
  if (!is_homogeneous(batch, samples)) {
    throw ContractError("joint_loss: batch mixes (task, era) metadata; regroup by (task, era)");
  }
  Tensor logits = forward(model, batch_features(samples, batch), batch.task_id, batch.era_id, ctx);
  auto labels = batch_labels(samples, batch);
  return cross_entropy(logits, std::span<const int>(labels));
}

double SplitMetrics::mean_accuracy() const {
  if (cells.empty()) return 0.0;
  double s = 0.0;
  for (const auto& c : cells) s += c.accuracy;
  return s / static_cast<double>(cells.size());
}

double SplitMetrics::mean_loss() const {
  if (cells.empty()) return 0.0;
  double s = 0.0;
  for (const auto& c : cells) s += c.loss;
  return s / static_cast<double>(cells.size());
}

SplitMetrics evaluate(const AdaptedModel& model, std::span<const Sample> samples, Index batch_size) {
  NoGradGuard no_grad;
  std::map<std::pair<int, int>, CellMetrics> cells;
  for (const auto& batch : group_batches(samples, batch_size)) {
    Tensor logits = forward(model, batch_features(samples, batch), batch.task_id, batch.era_id);
    auto labels = batch_labels(samples, batch);
    const double loss = cross_entropy(logits, std::span<const int>(labels)).item();
    auto& cell = cells[{batch.task_id, batch.era_id}];
    cell.task_id = batch.task_id;
    cell.era_id = batch.era_id;
    const auto& z = logits.value();
    std::size_t correct = 0;
    for (Index r = 0; r < z.rows(); ++r) {
      Index best = 0;
      z.row(r).maxCoeff(&best);
      if (best == labels[static_cast<std::size_t>(r)]) ++correct;
    }
    // Accumulate sums; normalised below.
    cell.loss += loss * static_cast<double>(labels.size());
    cell.accuracy += static_cast<double>(correct);
    cell.count += labels.size();
  }
  SplitMetrics out;
  for (auto& [key, cell] : cells) {
    cell.loss /= static_cast<double>(cell.count);
    cell.accuracy /= static_cast<double>(cell.count);
    out.cells.push_back(cell);
  }
  return out;
}

// -- training ----------------------------------------------------------------

namespace {

RunResult train_on(const TrainConfig& config, std::span<const Sample> train_split, std::span<const Sample> dev_split,
                   std::span<const Sample> test_split) {
  const auto start = std::chrono::steady_clock::now();
  RunResult result;
  result.variant = std::string(to_string(config.model.mode));
  result.model = make_model(config.model, derive_seed(config.seed, seed_stream::kInit));
  const FrozenSnapshot frozen = snapshot_frozen(result.model);

  Optimizer opt(trainable_parameters(result.model), config);
  Rng shuffle_rng(derive_seed(config.seed, seed_stream::kShuffle));
  Rng dropout_rng(derive_seed(config.seed, seed_stream::kDropout));
  const ForwardContext ctx{true, &dropout_rng};

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const std::vector<Batch> batches = batch_iter(train_split, config.batch_size, shuffle_rng);
    // Every epoch yields the same batch count.
    const std::uint64_t total_steps = batches.size() * static_cast<std::uint64_t>(config.epochs);
    for (const auto& batch : batches) {
      opt.set_learning_rate(scheduled_learning_rate(config.learning_rate, config.schedule, opt.steps(), total_steps));
      auto diverged = [&](const std::string& what) {
        return DivergenceError(what + " at step " + std::to_string(opt.steps() + 1) + " (epoch " +
                               std::to_string(epoch) + ", task " + std::to_string(batch.task_id) + ", era " +
                               std::to_string(batch.era_id) + ")");
      };
      opt.zero_grad();
      Tensor loss;
      try {
        loss = joint_loss(result.model, train_split, batch, ctx);
      } catch (const NumericError& e) {
        throw diverged(std::string("non-finite forward pass: ") + e.what());
      }
      const double value = loss.item();
      if (!std::isfinite(value)) throw diverged("loss became " + format_double(value));
      backward(loss);
      opt.step();
      result.step_loss.push_back(value);
    }
    // Eval-mode loss of the end-of-epoch parameters over the whole training split.
    try {
      result.epoch_train_loss.push_back(evaluate(result.model, train_split).mean_loss());
    } catch (const NumericError& e) {
      throw DivergenceError(std::string("non-finite parameters after epoch ") + std::to_string(epoch) + " (step " +
                            std::to_string(opt.steps()) + "): " + e.what());
    }
    if (!dev_split.empty()) result.dev_history.push_back(evaluate(result.model, dev_split));
  }
  opt.zero_grad();

  if (!freeze_check(result.model, frozen)) throw ContractError("frozen backbone weights changed during training");
  if (!dev_split.empty()) result.dev = evaluate(result.model, dev_split);
  if (!test_split.empty()) result.test = evaluate(result.model, test_split);
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::vector<Sample> cell_of(std::span<const Sample> samples, int task, int era) {
  std::vector<Sample> out;
  for (const auto& s : samples) {
    if (s.task_id == task && s.era_id == era) out.push_back(s);
  }
  return out;
}

}  // namespace

RunResult train(const TrainConfig& config, const Dataset& data) {
  validate(config);
  std::set<std::pair<int, int>> present;
  for (const auto& s : data.train) present.emplace(s.task_id, s.era_id);
  const int n_tasks = static_cast<int>(config.model.backbone.head_widths.size());
  for (int t = 0; t < n_tasks; ++t) {
    for (int e = 0; e < config.model.n_eras; ++e) {
      if (!present.count({t, e})) {
        throw ContractError("training data has no samples for task " + std::to_string(t) + ", era " +
                            std::to_string(e));
      }
    }
  }
  return train_on(config, data.train, data.dev, data.test);
}

RunResult train_per_cell(const TrainConfig& config, const Dataset& data) {
  TrainConfig single = config;
  single.model.mode = RoutingMode::NoMoE;
  single.model.adapter.n_experts = 1;
  validate(single);

  RunResult combined;
  combined.variant = "single";
  const auto start = std::chrono::steady_clock::now();
  const int n_tasks = static_cast<int>(config.model.backbone.head_widths.size());
  for (int t = 0; t < n_tasks; ++t) {
    for (int e = 0; e < config.model.n_eras; ++e) {
      auto train_cell = cell_of(data.train, t, e);
      if (train_cell.empty()) {
        throw ContractError("no training samples for task " + std::to_string(t) + ", era " + std::to_string(e));
      }
      RunResult r = train_on(single, train_cell, cell_of(data.dev, t, e), cell_of(data.test, t, e));
      for (const auto& c : r.dev.cells) combined.dev.cells.push_back(c);
      for (const auto& c : r.test.cells) combined.test.cells.push_back(c);
      combined.model = std::move(r.model);
    }
  }
  combined.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return combined;
}

// -- ablations ---------------------------------------------------------------

std::string AblationVariant::name() const { return std::string(to_string(mode)); }

std::string AblationVariant::granularity_label() const {
  return granularity ? std::string(to_string(granularity->kind())) : "n/a";
}

std::vector<AblationVariant> default_ablation_grid(const TaskGranularity& coarse, const TaskGranularity& fine) {
  return {
      {RoutingMode::NoMoE, std::nullopt},
      {RoutingMode::EraOnly, std::nullopt},
      {RoutingMode::TaskOnly, coarse},
      {RoutingMode::TaskOnly, fine},
      {RoutingMode::SeparateGates, coarse},
      {RoutingMode::SeparateGates, fine},
      {RoutingMode::ConcatSingleGate, coarse},
      {RoutingMode::ConcatSingleGate, fine},
  };
}

TrainConfig variant_config(const TrainConfig& base, const AblationVariant& variant, const TaskGranularity& fine) {
  TrainConfig c = base;
  c.model.mode = variant.mode;
  c.model.granularity = variant.granularity.value_or(fine);
  if (variant.mode == RoutingMode::NoMoE) c.model.adapter.n_experts = 1;
  return c;
}

std::vector<AblationRow> run_ablation_suite(const TrainConfig& base, const std::vector<AblationVariant>& grid,
                                            const TaskGranularity& fine, const Dataset& data, unsigned jobs) {
  std::vector<AblationRow> rows(grid.size());
  auto run_one = [&](std::size_t i) {
    rows[i].variant = grid[i];
    rows[i].result = train(variant_config(base, grid[i], fine), data);
    rows[i].result.variant = grid[i].name();
  };
  if (jobs <= 1) {
    for (std::size_t i = 0; i < grid.size(); ++i) run_one(i);
    return rows;
  }
  for (std::size_t begin = 0; begin < grid.size(); begin += jobs) {
    std::vector<std::future<void>> pending;
    for (std::size_t i = begin; i < std::min(grid.size(), begin + jobs); ++i) {
      pending.push_back(std::async(std::launch::async, run_one, i));
    }
    for (auto& f : pending) f.get();
  }
  return rows;
}

// -- reporting ---------------------------------------------------------------

namespace {

std::string cell_name(const CellMetrics& c) { return "t" + std::to_string(c.task_id) + "e" + std::to_string(c.era_id); }

}  // namespace

void write_metrics_csv(std::ostream& os, const RunResult& r) {
  os << "variant,cell,metric,value\n";
  for (std::size_t e = 0; e < r.epoch_train_loss.size(); ++e) {
    os << r.variant << ",all,train_loss_epoch" << e << ',' << format_double(r.epoch_train_loss[e]) << '\n';
  }
  for (auto [split, metrics] : {std::pair{"dev", &r.dev}, std::pair{"test", &r.test}}) {
    for (const auto& c : metrics->cells) {
      os << r.variant << ',' << cell_name(c) << ',' << split << "_accuracy," << format_double(c.accuracy) << '\n';
      os << r.variant << ',' << cell_name(c) << ',' << split << "_loss," << format_double(c.loss) << '\n';
    }
    os << r.variant << ",all," << split << "_mean_accuracy," << format_double(metrics->mean_accuracy()) << '\n';
    os << r.variant << ",all," << split << "_mean_loss," << format_double(metrics->mean_loss()) << '\n';
  }
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "variant,granularity,cell,accuracy,loss\n";
  for (const auto& row : rows) {
    const std::string prefix = row.variant.name() + ',' + row.variant.granularity_label() + ',';
    for (const auto& c : row.result.test.cells) {
      os << prefix << cell_name(c) << ',' << format_double(c.accuracy) << ',' << format_double(c.loss) << '\n';
    }
    os << prefix << "mean," << format_double(row.result.test.mean_accuracy()) << ','
       << format_double(row.result.test.mean_loss()) << '\n';
  }
}

}  // namespace teamoe
