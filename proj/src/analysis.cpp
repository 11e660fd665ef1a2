// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "teamoe/analysis.hpp"

#include "teamoe/format.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <system_error>

namespace teamoe {

std::string_view to_string(Axis axis) { return axis == Axis::Task ? "task" : "era"; }

Axis parse_axis(std::string_view text) {
  if (text == "task") return Axis::Task;
  if (text == "era") return Axis::Era;
  throw ConfigError("unknown axis '" + std::string(text) + "' (expected task or era)");
}

UtilizationMatrix utilization(std::span<const Sample> samples, Axis axis, const GateFn& gate,
                              const std::vector<int>& expected_groups) {
  std::map<int, std::pair<Eigen::VectorXd, std::size_t>> sums;
  for (int g : expected_groups) sums[g];
  for (const auto& s : samples) {
    const int g = axis == Axis::Task ? s.task_id : s.era_id;
    Eigen::VectorXd w = gate(s);
    auto& [acc, count] = sums[g];
    if (count == 0) {
      acc = w;
    } else {
      if (acc.size() != w.size()) throw DimensionError("utilization: gate width changed between samples");
      acc += w;
    }
    ++count;
  }
  if (sums.empty()) throw DataError("utilization: no samples");

  UtilizationMatrix m;
  m.axis = axis;
  Index width = -1;
  for (const auto& [g, entry] : sums) {
    if (entry.second == 0) {
      throw DataError("utilization: " + std::string(to_string(axis)) + " group " + std::to_string(g) +
                      " has no samples");
    }
    width = entry.first.size();
  }
  m.weights.resize(static_cast<Index>(sums.size()), width);
  Index r = 0;
  for (const auto& [g, entry] : sums) {
    m.groups.push_back(g);
    m.weights.row(r++) = (entry.first / static_cast<double>(entry.second)).transpose();
  }
  return m;
}

UtilizationMatrix utilization(const AdaptedModel& model, std::span<const Sample> samples, Axis axis) {
  NoGradGuard no_grad;
  std::vector<int> expected;
  const int n = axis == Axis::Task ? static_cast<int>(model.heads.size()) : static_cast<int>(model.config.n_eras);
  for (int g = 0; g < n; ++g) expected.push_back(g);
  auto gate = [&](const Sample& s) -> Eigen::VectorXd {
    GateWeights w = model_route(model, s.task_id, s.era_id, 0);
    const Tensor& chosen = axis == Axis::Task ? w.task : w.era;
    return chosen.value().row(0).transpose();
  };
  return utilization(samples, axis, gate, expected);
}

SmoothnessReport row_smoothness(const Eigen::VectorXd& row) {
  if (row.size() == 0) throw ContractError("smoothness: empty row");
  if ((row.array() < 0.0).any()) throw ContractError("smoothness: row has negative weights");
  if (std::abs(row.sum() - 1.0) > 1e-6) {
    throw ContractError("smoothness: row sums to " + format_double(row.sum()) + ", expected 1");
  }
  SmoothnessReport r;
  const double mean = row.mean();
  r.variance = (row.array() - mean).square().mean();
  for (Index i = 0; i < row.size(); ++i) {
    const double p = row(i);
    if (p > 0.0) r.entropy -= p * std::log(p);
  }
  r.max_min_diff = row.maxCoeff() - row.minCoeff();
  return r;
}

SmoothnessReport smoothness(const UtilizationMatrix& matrix) {
  if (matrix.weights.rows() == 0) throw ContractError("smoothness: empty matrix");
  SmoothnessReport total;
  for (Index r = 0; r < matrix.weights.rows(); ++r) {
    const SmoothnessReport row = row_smoothness(matrix.weights.row(r).transpose());
    total.variance += row.variance;
    total.entropy += row.entropy;
    total.max_min_diff += row.max_min_diff;
  }
  const double n = static_cast<double>(matrix.weights.rows());
  total.variance /= n;
  total.entropy /= n;
  total.max_min_diff /= n;
  return total;
}

void export_heatmap_data(const UtilizationMatrix& matrix, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::system_error(errno, std::generic_category(), "cannot open " + path.string() + " for writing");
  }
  out << "group,expert,weight\n";
  for (Index r = 0; r < matrix.weights.rows(); ++r) {
    for (Index c = 0; c < matrix.weights.cols(); ++c) {
      out << matrix.groups[static_cast<std::size_t>(r)] << ',' << c << ',' << format_double(matrix.weights(r, c))
          << '\n';
    }
  }
  out.flush();
  if (!out) throw std::system_error(errno, std::generic_category(), "write failed for " + path.string());
}

UtilizationMatrix import_heatmap_data(const std::filesystem::path& path, Axis axis) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::system_error(errno, std::generic_category(), "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "group,expert,weight") {
    throw DataError(path.string() + ": missing heatmap header");
  }
  std::map<int, std::map<int, double>> cells;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string g, e, w;
    if (!std::getline(fields, g, ',') || !std::getline(fields, e, ',') || !std::getline(fields, w)) {
      throw DataError(path.string() + ": malformed line '" + line + "'");
    }
    cells[std::stoi(g)][std::stoi(e)] = parse_double(w);
  }
  UtilizationMatrix m;
  m.axis = axis;
  if (cells.empty()) return m;
  const auto width = static_cast<Index>(cells.begin()->second.size());
  m.weights.resize(static_cast<Index>(cells.size()), width);
  Index r = 0;
  for (const auto& [g, row] : cells) {
    if (static_cast<Index>(row.size()) != width) throw DataError(path.string() + ": ragged heatmap rows");
    m.groups.push_back(g);
    for (const auto& [e, w] : row) {
      if (e < 0 || e >= width) throw DataError(path.string() + ": expert index " + std::to_string(e) + " out of range");
      m.weights(r, e) = w;
    }
    ++r;
  }
  return m;
}

std::string smoothness_json(const SmoothnessReport& report, const std::string& variant, Axis axis) {
  nlohmann::ordered_json j;
  j["variant"] = variant;
  j["axis"] = to_string(axis);
  j["variance"] = report.variance;
  j["entropy"] = report.entropy;
  j["max_min"] = report.max_min_diff;
  return j.dump(2);
}

}  // namespace teamoe
