// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Seeded randomness. All randomness in the library flows through Rng
// instances constructed from seeds derived here; nothing reads global state.

#pragma once

#include "teamoe/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <random>

namespace teamoe {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Child seed for stream `stream` of `parent`: splitmix64(parent ^ splitmix64(stream)).
/// Distinct streams of one parent are independent for all practical purposes,
/// and derivation composes, e.g. derive_seed(derive_seed(master, kInit), layer).
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream) {
  return splitmix64(parent ^ splitmix64(stream));
}

/// Stream ids hanging off a run's master seed.
namespace seed_stream {
inline constexpr std::uint64_t kData = 1;
inline constexpr std::uint64_t kInit = 2;
inline constexpr std::uint64_t kDropout = 3;
inline constexpr std::uint64_t kShuffle = 4;
}  // namespace seed_stream

template <typename Scalar = double>
BasicTensor<Scalar> randn(Shape shape, Rng& rng, Scalar stddev, bool requires_grad) {
  auto t = BasicTensor<Scalar>::zeros(std::move(shape), requires_grad);
  std::normal_distribution<Scalar> dist(Scalar(0), stddev);
  auto& v = t.mutable_value();
  for (Index i = 0; i < v.size(); ++i) v.data()[i] = dist(rng);
  return t;
}

template <typename Scalar = double>
BasicTensor<Scalar> uniform(Shape shape, Rng& rng, Scalar lo, Scalar hi, bool requires_grad) {
  auto t = BasicTensor<Scalar>::zeros(std::move(shape), requires_grad);
  std::uniform_real_distribution<Scalar> dist(lo, hi);
  auto& v = t.mutable_value();
  for (Index i = 0; i < v.size(); ++i) v.data()[i] = dist(rng);
  return t;
}

}  // namespace teamoe
