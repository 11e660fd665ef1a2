// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multi-task, multi-era classification data with a controllable
// conflict between eras.
//
// Task t draws a generator G_t [classes x d_in] ~ N(0, 1). A sample of era e
// has x ~ N(0, I) and label argmax(s_e G_t x + noise), noise ~ N(0, sigma^2),
// where s_e = 1 for even eras and 1 - 2 * conflict for odd eras. conflict = 0
// shares one generator across eras; conflict = 1 flips every boundary of the
// odd eras.

#pragma once

#include "teamoe/tensor.hpp"
#include "teamoe/random.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace teamoe {

struct Sample {
  Eigen::VectorXd x;
  int task_id = 0;
  int era_id = 0;
  int label = 0;
};

struct SynthSpec {
  int n_tasks = 4;
  int n_eras = 2;
  Index d_in = 16;
  std::vector<int> n_classes{2, 3, 2, 3};  // per task
  int train_per_cell = 500;
  int dev_per_cell = 100;
  int test_per_cell = 100;
  double conflict = 1.0;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
};

/// Throws ConfigError naming the offending field.
void validate(const SynthSpec& spec);

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> dev;
  std::vector<Sample> test;
};

/// Deterministic in spec.seed. A task whose generator leaves any class above
/// 70% of a cell's samples is redrawn.
Dataset generate(const SynthSpec& spec);

/// Largest single-class share of each (task, era) cell, worst case over cells.
double max_class_share(std::span<const Sample> samples, const SynthSpec& spec);

struct Batch {
  int task_id = 0;
  int era_id = 0;
  std::vector<std::size_t> indices;  // into the split the batch was cut from
};

/// One epoch of (task, era)-homogeneous batches: samples are grouped by
/// metadata, shuffled within their group, chunked, and the chunks shuffled.
/// Every sample appears in exactly one batch.
std::vector<Batch> batch_iter(std::span<const Sample> samples, Index batch_size, Rng& rng);

/// Every sample of `samples` grouped into homogeneous batches in dataset
/// order, for evaluation.
std::vector<Batch> group_batches(std::span<const Sample> samples, Index batch_size);

bool is_homogeneous(const Batch& batch, std::span<const Sample> samples);

/// [batch x d_in] feature tensor for the batch.
Tensor batch_features(std::span<const Sample> samples, const Batch& batch);
std::vector<int> batch_labels(std::span<const Sample> samples, const Batch& batch);

/// Line-delimited JSON records, one per sample:
/// {"split":"train","task":0,"era":1,"label":2,"x":[...]}. Doubles are written
/// in shortest round-trip form.
void write_records(std::ostream& os, const Dataset& data);
Dataset read_records(std::istream& is);

}  // namespace teamoe
