// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// tea_moelora: train, ablate, analyze and gradcheck entry points.

#include "teamoe/commands.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace {

struct SharedFlags {
  std::optional<std::filesystem::path> config;
  teamoe::ConfigOverrides overrides;
};

void add_shared_flags(CLI::App* cmd, SharedFlags& flags) {
  cmd->add_option("--config", flags.config, "Run config (JSON); defaults apply to omitted fields")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", flags.overrides.seed, "Master seed");
  cmd->add_option("--out", flags.overrides.out, "Output directory");
  cmd->add_option("--n-experts", flags.overrides.n_experts, "Number of experts N");
  cmd->add_option("--rank", flags.overrides.rank, "Total LoRA rank r (must be divisible by N)");
  cmd->add_option("--mode", flags.overrides.mode, "Routing mode")
      ->check(CLI::IsMember({"separate", "concat", "task-only", "era-only", "no-moe"}));
  cmd->add_option("--granularity", flags.overrides.granularity, "Task-id granularity")
      ->check(CLI::IsMember({"coarse", "fine"}));
  cmd->add_option("--conflict", flags.overrides.conflict, "Era conflict in [0, 1]");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task/era-gated mixture-of-LoRA-experts experiments.\n"
               "Flags override values from --config, which override built-in defaults.\n"
               "Set TEA_LOG=debug|info|warn|error|off to control logging."};
  app.require_subcommand(1);

  SharedFlags train_flags, ablate_flags, grad_flags;
  auto* train = app.add_subcommand("train", "Generate data, train one model, write metrics and a checkpoint");
  add_shared_flags(train, train_flags);
  auto* ablate = app.add_subcommand("ablate", "Train the routing-mode x granularity grid and compare");
  add_shared_flags(ablate, ablate_flags);
  auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  add_shared_flags(gradcheck, grad_flags);

  std::filesystem::path checkpoint;
  std::string axis = "task";
  std::optional<std::filesystem::path> analyze_out;
  auto* analyze = app.add_subcommand("analyze", "Expert-utilization heatmap and smoothness from a checkpoint");
  analyze->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
  analyze->add_option("--axis", axis, "Group samples by task or era")->check(CLI::IsMember({"task", "era"}));
  analyze->add_option("--out", analyze_out, "Output directory (default: the checkpoint's directory)");

  CLI11_PARSE(app, argc, argv);

  if (*train) return teamoe::cmd_train(train_flags.config, train_flags.overrides);
  if (*ablate) return teamoe::cmd_ablate(ablate_flags.config, ablate_flags.overrides);
  if (*gradcheck) return teamoe::cmd_gradcheck(grad_flags.config, grad_flags.overrides);
  if (*analyze) return teamoe::cmd_analyze(checkpoint, teamoe::parse_axis(axis), analyze_out);
  return 1;
}
