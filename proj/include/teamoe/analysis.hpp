// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Expert-utilization matrices and their smoothness statistics.

#pragma once

#include "teamoe/backbone.hpp"
#include "teamoe/synthdata.hpp"

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace teamoe {

enum class Axis { Task, Era };

std::string_view to_string(Axis axis);
Axis parse_axis(std::string_view text);

/// Row g, column i: mean routing weight that group g's samples put on expert i.
struct UtilizationMatrix {
  Axis axis = Axis::Task;
  std::vector<int> groups;  // dataset ids or era ids, ascending
  Eigen::MatrixXd weights;  // [groups x experts]
};

/// Routing weights of one sample on the chosen axis's gate.
using GateFn = std::function<Eigen::VectorXd(const Sample&)>;

/// Averages `gate` over the samples of each group present in `samples`.
/// Throws DataError if one of `expected_groups` has no samples.
UtilizationMatrix utilization(std::span<const Sample> samples, Axis axis, const GateFn& gate,
                              const std::vector<int>& expected_groups = {});

/// Eval-mode routing of the model's first router. Expects every dataset id
/// (task axis) or era id (era axis) of the model to appear in `samples`.
UtilizationMatrix utilization(const AdaptedModel& model, std::span<const Sample> samples, Axis axis);

struct SmoothnessReport {
  double variance = 0.0;
  double entropy = 0.0;  // natural log
  double max_min_diff = 0.0;
};

/// Per-row population variance, Shannon entropy (0 ln 0 := 0) and max - min,
/// each averaged over rows with equal weight. Throws ContractError if a row is
/// negative or does not sum to 1 within 1e-6.
SmoothnessReport smoothness(const UtilizationMatrix& matrix);
SmoothnessReport row_smoothness(const Eigen::VectorXd& row);

/// CSV with header "group,expert,weight", one line per matrix entry in
/// row-major order.
void export_heatmap_data(const UtilizationMatrix& matrix, const std::filesystem::path& path);
UtilizationMatrix import_heatmap_data(const std::filesystem::path& path, Axis axis);

/// {"variant":..,"axis":..,"variance":..,"entropy":..,"max_min":..}
std::string smoothness_json(const SmoothnessReport& report, const std::string& variant, Axis axis);

}  // namespace teamoe
