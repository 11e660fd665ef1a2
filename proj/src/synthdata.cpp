// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "teamoe/synthdata.hpp"

#include "json.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <random>

namespace teamoe {

namespace {

constexpr double kMaxClassShare = 0.7;
constexpr int kMaxRedraws = 1000;

struct CellKey {
  int task;
  int era;
  auto operator<=>(const CellKey&) const = default;
};

std::vector<Sample> draw_cell(const Eigen::MatrixXd& generator, int task, int era, int count, Index d_in,
                              double noise_sigma, Rng& rng) {
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int n = 0; n < count; ++n) {
    Sample s;
    s.task_id = task;
    s.era_id = era;
    s.x.resize(d_in);
    for (Index i = 0; i < d_in; ++i) s.x(i) = unit(rng);
    Eigen::VectorXd logits = generator * s.x;
    for (Index c = 0; c < logits.size(); ++c) logits(c) += noise_sigma * unit(rng);
    Index best = 0;
    logits.maxCoeff(&best);
    s.label = static_cast<int>(best);
    out.push_back(std::move(s));
  }
  return out;
}

double cell_max_share(std::span<const Sample> cell, int classes) {
  if (cell.empty()) return 0.0;
  std::vector<int> counts(static_cast<std::size_t>(classes), 0);
  for (const auto& s : cell) ++counts[static_cast<std::size_t>(s.label)];
  return static_cast<double>(*std::max_element(counts.begin(), counts.end())) / static_cast<double>(cell.size());
}

}  // namespace

void validate(const SynthSpec& spec) {
  if (spec.n_tasks < 1) throw ConfigError("data.n_tasks must be >= 1");
  if (spec.n_eras < 1) throw ConfigError("data.n_eras must be >= 1");
  if (spec.d_in < 1) throw ConfigError("data.d_in must be >= 1");
  if (static_cast<int>(spec.n_classes.size()) != spec.n_tasks) {
    throw ConfigError("data.n_classes needs one entry per task (" + std::to_string(spec.n_tasks) + ")");
  }
  for (int c : spec.n_classes) {
    if (c < 2) throw ConfigError("data.n_classes entries must be >= 2");
  }
  if (spec.train_per_cell < 1 || spec.dev_per_cell < 1 || spec.test_per_cell < 1) {
    throw ConfigError("data.*_per_cell counts must be >= 1");
  }
  if (!(spec.conflict >= 0.0 && spec.conflict <= 1.0)) throw ConfigError("data.conflict must lie in [0, 1]");
  if (!(spec.noise_sigma >= 0.0)) throw ConfigError("data.noise_sigma must be >= 0");
}

Dataset generate(const SynthSpec& spec) {
  validate(spec);
  Dataset data;
  for (int t = 0; t < spec.n_tasks; ++t) {
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(t)));
    const int classes = spec.n_classes[static_cast<std::size_t>(t)];
    std::normal_distribution<double> unit(0.0, 1.0);
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxRedraws) {
        throw ConfigError("task " + std::to_string(t) + ": no balanced generator found after " +
                          std::to_string(kMaxRedraws) + " draws");
      }
      Eigen::MatrixXd g(classes, spec.d_in);
      for (Index i = 0; i < g.size(); ++i) g.data()[i] = unit(rng);

      Dataset task_data;
      bool balanced = true;
      for (int e = 0; e < spec.n_eras && balanced; ++e) {
        const double era_scale = (e % 2 == 1) ? 1.0 - 2.0 * spec.conflict : 1.0;
        const Eigen::MatrixXd ge = g * era_scale;
        for (auto [split, count] : {std::pair{&task_data.train, spec.train_per_cell},
                                    std::pair{&task_data.dev, spec.dev_per_cell},
                                    std::pair{&task_data.test, spec.test_per_cell}}) {
          auto cell = draw_cell(ge, t, e, count, spec.d_in, spec.noise_sigma, rng);
          if (cell_max_share(cell, classes) > kMaxClassShare) {
            balanced = false;
            break;
          }
          split->insert(split->end(), std::make_move_iterator(cell.begin()), std::make_move_iterator(cell.end()));
        }
      }
      if (!balanced) continue;
      for (auto [dst, src] : {std::pair{&data.train, &task_data.train}, std::pair{&data.dev, &task_data.dev},
                              std::pair{&data.test, &task_data.test}}) {
        dst->insert(dst->end(), std::make_move_iterator(src->begin()), std::make_move_iterator(src->end()));
      }
      break;
    }
  }
  return data;
}

double max_class_share(std::span<const Sample> samples, const SynthSpec& spec) {
  std::map<CellKey, std::vector<Sample>> cells;
  for (const auto& s : samples) cells[{s.task_id, s.era_id}].push_back(s);
  double worst = 0.0;
  for (const auto& [key, cell] : cells) {
    worst = std::max(worst, cell_max_share(cell, spec.n_classes[static_cast<std::size_t>(key.task)]));
  }
  return worst;
}

std::vector<Batch> batch_iter(std::span<const Sample> samples, Index batch_size, Rng& rng) {
  if (batch_size < 1) throw ContractError("batch_size must be >= 1");
  if (samples.empty()) throw ContractError("batch_iter on an empty dataset");
  std::map<CellKey, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) groups[{samples[i].task_id, samples[i].era_id}].push_back(i);

  std::vector<Batch> batches;
  for (auto& [key, indices] : groups) {
    std::shuffle(indices.begin(), indices.end(), rng);
    for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch_size)) {
      const std::size_t stop = std::min(indices.size(), start + static_cast<std::size_t>(batch_size));
      batches.push_back({key.task, key.era, {indices.begin() + static_cast<std::ptrdiff_t>(start),
                                             indices.begin() + static_cast<std::ptrdiff_t>(stop)}});
    }
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

std::vector<Batch> group_batches(std::span<const Sample> samples, Index batch_size) {
  if (batch_size < 1) throw ContractError("batch_size must be >= 1");
  std::map<CellKey, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) groups[{samples[i].task_id, samples[i].era_id}].push_back(i);
  std::vector<Batch> batches;
  for (const auto& [key, indices] : groups) {
    for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch_size)) {
      const std::size_t stop = std::min(indices.size(), start + static_cast<std::size_t>(batch_size));
      batches.push_back({key.task, key.era, {indices.begin() + static_cast<std::ptrdiff_t>(start),
                                             indices.begin() + static_cast<std::ptrdiff_t>(stop)}});
    }
  }
  return batches;
}

bool is_homogeneous(const Batch& batch, std::span<const Sample> samples) {
  return std::all_of(batch.indices.begin(), batch.indices.end(), [&](std::size_t i) {
    return samples[i].task_id == batch.task_id && samples[i].era_id == batch.era_id;
  });
}

Tensor batch_features(std::span<const Sample> samples, const Batch& batch) {
  if (batch.indices.empty()) throw ContractError("empty batch");
  const Index d = samples[batch.indices.front()].x.size();
  Matrix m(static_cast<Index>(batch.indices.size()), d);
  for (std::size_t r = 0; r < batch.indices.size(); ++r) m.row(static_cast<Index>(r)) = samples[batch.indices[r]].x;
  return Tensor::from_matrix(m);
}

std::vector<int> batch_labels(std::span<const Sample> samples, const Batch& batch) {
  std::vector<int> labels;
  labels.reserve(batch.indices.size());
  for (std::size_t i : batch.indices) labels.push_back(samples[i].label);
  return labels;
}

void write_records(std::ostream& os, const Dataset& data) {
  for (auto [name, split] : {std::pair{"train", &data.train}, std::pair{"dev", &data.dev},
                             std::pair{"test", &data.test}}) {
    for (const auto& s : *split) {
      nlohmann::json rec;
      rec["split"] = name;
      rec["task"] = s.task_id;
      rec["era"] = s.era_id;
      rec["label"] = s.label;
      rec["x"] = std::vector<double>(s.x.data(), s.x.data() + s.x.size());
      os << rec.dump() << '\n';
    }
  }
}

Dataset read_records(std::istream& is) {
  Dataset data;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto rec = nlohmann::json::parse(line);
      Sample s;
      s.task_id = rec.at("task").get<int>();
      s.era_id = rec.at("era").get<int>();
      s.label = rec.at("label").get<int>();
      auto x = rec.at("x").get<std::vector<double>>();
      s.x = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Index>(x.size()));
      const auto split = rec.at("split").get<std::string>();
      if (split == "train") {
        data.train.push_back(std::move(s));
      } else if (split == "dev") {
        data.dev.push_back(std::move(s));
      } else if (split == "test") {
        data.test.push_back(std::move(s));
      } else {
        throw DataError("unknown split '" + split + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError("record line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return data;
}

}  // namespace teamoe
