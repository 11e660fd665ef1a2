// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "teamoe/commands.hpp"

#include "teamoe/checkpoint.hpp"
#include "teamoe/gradcheck.hpp"

#include "json.hpp"

#include <spdlog/spdlog.h>

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>

namespace teamoe {

namespace fs = std::filesystem;

void init_logging() {
  const char* env = std::getenv("TEA_LOG");
  auto level = spdlog::level::info;
  if (env && *env) {
    level = spdlog::level::from_str(env);
    // from_str maps unknown names to off; keep info instead.
    if (level == spdlog::level::off && std::string(env) != "off") level = spdlog::level::info;
  }
  spdlog::set_level(level);
}

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw std::runtime_error("output directory " + dir.string() + " is locked by another run (" + path_.string() +
                             " exists)");
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

RunConfig resolve_config(const std::optional<fs::path>& config_path, const ConfigOverrides& overrides) {
  RunConfig config = config_path ? load_run_config(*config_path) : RunConfig{};
  apply_overrides(config, overrides);
  validate(config);
  return config;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

nlohmann::ordered_json split_json(const SplitMetrics& m) {
  nlohmann::ordered_json cells = nlohmann::ordered_json::array();
  for (const auto& c : m.cells) {
    cells.push_back({{"task", c.task_id}, {"era", c.era_id}, {"accuracy", c.accuracy}, {"loss", c.loss},
                     {"count", c.count}});
  }
  return {{"mean_accuracy", m.mean_accuracy()}, {"mean_loss", m.mean_loss()}, {"cells", cells}};
}

std::string result_json(const RunResult& r) {
  nlohmann::ordered_json j;
  j["variant"] = r.variant;
  j["epoch_train_loss"] = r.epoch_train_loss;
  j["steps"] = r.step_loss.size();
  nlohmann::ordered_json history = nlohmann::ordered_json::array();
  for (const auto& h : r.dev_history) history.push_back(h.mean_accuracy());
  j["dev_mean_accuracy_history"] = history;
  j["dev"] = split_json(r.dev);
  j["test"] = split_json(r.test);
  j["wall_seconds"] = r.wall_seconds;
  return j.dump(2) + "\n";
}

void report_config_errors(const ConfigValidationError& e) {
  std::cerr << "error: invalid configuration\n";
  for (const auto& f : e.errors()) std::cerr << "  " << f.field << ": " << f.message << '\n';
}

template <typename Body>
int guarded(const char* command, Body body) {
  try {
    return body();
  } catch (const ConfigValidationError& e) {
    report_config_errors(e);
    return exit_code::kBadConfig;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code::kBadConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << command << ": " << e.what() << '\n';
    return exit_code::kFailure;
  }
}

}  // namespace

int cmd_train(const std::optional<fs::path>& config_path, const ConfigOverrides& overrides) {
  return guarded("train", [&] {
    init_logging();
    const RunConfig config = resolve_config(config_path, overrides);
    fs::create_directories(config.out);
    std::unique_ptr<DirectoryLock> lock;
    try {
      lock = std::make_unique<DirectoryLock>(config.out);
    } catch (const std::runtime_error& e) {
      std::cerr << "error: " << e.what() << '\n';
      return exit_code::kLocked;
    }
    write_text(config.out / "config.json", dump_run_config(config));

    const Dataset data = generate(synth_spec(config));
    spdlog::info("train: {} train / {} dev / {} test samples, mode {}", data.train.size(), data.dev.size(),
                 data.test.size(), to_string(config.mode));
    const RunResult result = train(train_config(config), data);
    for (std::size_t e = 0; e < result.epoch_train_loss.size(); ++e) {
      spdlog::debug("epoch {:3d}  train loss {:.6f}  dev acc {:.4f}", e, result.epoch_train_loss[e],
                    result.dev_history[e].mean_accuracy());
    }
    spdlog::info("train: dev acc {:.4f}, test acc {:.4f} in {:.1f}s", result.dev.mean_accuracy(),
                 result.test.mean_accuracy(), result.wall_seconds);

    std::ofstream csv(config.out / "metrics.csv", std::ios::binary | std::ios::trunc);
    write_metrics_csv(csv, result);
    csv.close();
    write_text(config.out / "result.json", result_json(result));
    save_checkpoint(config.out / "checkpoint.bin", make_checkpoint(result.model, config));
    spdlog::info("train: wrote {}", config.out.string());
    return exit_code::kOk;
  });
}

int cmd_ablate(const std::optional<fs::path>& config_path, const ConfigOverrides& overrides) {
  return guarded("ablate", [&] {
    init_logging();
    const RunConfig config = resolve_config(config_path, overrides);
    fs::create_directories(config.out);
    std::unique_ptr<DirectoryLock> lock;
    try {
      lock = std::make_unique<DirectoryLock>(config.out);
    } catch (const std::runtime_error& e) {
      std::cerr << "error: " << e.what() << '\n';
      return exit_code::kLocked;
    }
    write_text(config.out / "config.json", dump_run_config(config));

    const Dataset data = generate(synth_spec(config));
    const auto fine = fine_granularity(config);
    const auto grid = default_ablation_grid(coarse_granularity(config), fine);
    const auto rows = run_ablation_suite(train_config(config), grid, fine, data, config.jobs);
    for (const auto& row : rows) {
      spdlog::info("ablate: {:<10} {:<6} test acc {:.4f}", row.variant.name(), row.variant.granularity_label(),
                   row.result.test.mean_accuracy());
    }
    std::ofstream csv(config.out / "ablation.csv", std::ios::binary | std::ios::trunc);
    write_ablation_csv(csv, rows);
    return exit_code::kOk;
  });
}

int cmd_analyze(const fs::path& checkpoint_path, Axis axis, const std::optional<fs::path>& out_dir) {
  return guarded("analyze", [&] {
    init_logging();
    Checkpoint ckpt;
    try {
      ckpt = load_checkpoint(checkpoint_path);
    } catch (const CheckpointError& e) {
      std::cerr << "error: " << checkpoint_path.string() << ": " << e.what() << '\n';
      return exit_code::kFailure;
    }
    RunConfig config;
    const AdaptedModel model = restore_model(ckpt, &config);
    const Dataset data = generate(synth_spec(config));
    const UtilizationMatrix matrix = utilization(model, data.test, axis);
    const SmoothnessReport report = smoothness(matrix);

    const fs::path dir = out_dir.value_or(checkpoint_path.parent_path().empty() ? fs::path(".")
                                                                                 : checkpoint_path.parent_path());
    fs::create_directories(dir);
    const std::string suffix(to_string(axis));
    export_heatmap_data(matrix, dir / ("heatmap_" + suffix + ".csv"));
    write_text(dir / ("smoothness_" + suffix + ".json"),
               smoothness_json(report, std::string(to_string(config.mode)), axis) + "\n");
    spdlog::info("analyze: {} axis entropy {:.5f}, variance {:.5f}, max-min {:.5f}", suffix, report.entropy,
                 report.variance, report.max_min_diff);
    return exit_code::kOk;
  });
}

// -- gradient check ----------------------------------------------------------

GradcheckReport run_gradcheck(const RunConfig& base, const GradcheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  RunConfig tiny = base;
  tiny.d_model = 8;
  tiny.n_experts = 2;
  tiny.rank = 4;
  tiny.alpha.reset();
  tiny.d_task = 4;
  tiny.d_era = 4;
  tiny.d_hidden = 8;
  tiny.dropout = std::max(base.dropout, 0.1);
  // Cells stay large enough for the generator's class-balance check; the loss
  // only uses the first few samples of each cell.
  tiny.train_per_cell = 10;
  tiny.dev_per_cell = 10;
  tiny.test_per_cell = 10;
  constexpr Index kSamplesPerCell = 4;

  GradcheckReport report;
  for (int s = 0; s < options.n_seeds; ++s) {
    const std::uint64_t seed = derive_seed(base.seed, 1000 + static_cast<std::uint64_t>(s));
    tiny.seed = seed;
    const Dataset data = generate(synth_spec(tiny));
    std::vector<Batch> batches;
    for (auto& b : group_batches(data.train, kSamplesPerCell)) {
      if (batches.empty() || b.task_id != batches.back().task_id || b.era_id != batches.back().era_id) {
        batches.push_back(std::move(b));
      }
    }

    for (auto mode : {RoutingMode::SeparateGates, RoutingMode::ConcatSingleGate}) {
      tiny.mode = mode;
      const TrainConfig tc = train_config(tiny);
      AdaptedModel model = make_model(tc.model, seed);
      // Non-zero B so every path through the adapters carries gradient.
      Rng b_rng(derive_seed(seed, 77));
      for (auto& layer : model.layers) {
        for (auto& e : layer.experts) {
          e.B.mutable_value() = randn<double>(e.B.shape(), b_rng, 0.5, false).value();
        }
      }

      auto loss_fn = [&]() {
        Rng drop(derive_seed(seed, 99));
        const ForwardContext ctx{true, &drop};
        Tensor total;
        for (const auto& batch : batches) {
          Tensor logits = forward(model, batch_features(data.train, batch), batch.task_id, batch.era_id, ctx);
          if (options.logits_hook) logits = options.logits_hook(logits);
          auto labels = batch_labels(data.train, batch);
          Tensor l = cross_entropy(logits, std::span<const int>(labels));
          total = total.defined() ? add(total, l) : l;
        }
        return scale(total, 1.0 / static_cast<double>(batches.size()));
      };

      auto params = trainable_parameters(model);
      for (auto& p : params) p.zero_grad();
      backward(loss_fn());

      std::map<const TensorNode<double>*, std::string> names;
      for (const auto& [name, t] : named_tensors(model)) names.emplace(t.id(), name);

      for (auto& p : params) {
        const Matrix analytic = p.has_grad() ? p.grad() : Matrix::Zero(p.value().rows(), p.value().cols());
        const Matrix numeric = finite_diff_grad<double>(
            [&](const Tensor&) {
              NoGradGuard no_grad;
              return loss_fn().item();
            },
            p, options.step);
        const double err = max_relative_error(analytic, numeric);
        ++report.tensors_checked;
        if (err > report.max_relative_error || report.worst_tensor.empty()) {
          report.max_relative_error = std::max(report.max_relative_error, err);
          report.worst_tensor = std::string(to_string(mode)) + "/seed" + std::to_string(s) + "/" + names[p.id()];
        }
      }
    }
  }
  report.passed = report.max_relative_error <= options.tolerance;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

int cmd_gradcheck(const std::optional<fs::path>& config_path, const ConfigOverrides& overrides,
                  const GradcheckOptions& options) {
  return guarded("gradcheck", [&] {
    init_logging();
    const RunConfig config = resolve_config(config_path, overrides);
    const GradcheckReport report = run_gradcheck(config, options);
    std::cout << "gradcheck: " << report.tensors_checked << " tensors over " << options.n_seeds
              << " seeds, max relative error " << report.max_relative_error << " (worst " << report.worst_tensor
              << ", tolerance " << options.tolerance << ", " << report.seconds << " s)\n";
    if (!report.passed) {
      std::cerr << "gradcheck FAILED: worst tensor " << report.worst_tensor << '\n';
      return exit_code::kFailure;
    }
    return exit_code::kOk;
  });
}

}  // namespace teamoe
