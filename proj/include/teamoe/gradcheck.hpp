// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient oracle. Deliberately independent of the tape:
// it only ever evaluates the forward function.

#pragma once

#include "teamoe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace teamoe {

/// Central-difference estimate (f(x + h e_i) - f(x - h e_i)) / 2h for every
/// coordinate of `x`.
///
/// `x` is perturbed in place through its handle, so `f` may ignore its
/// argument and read `x` through any other handle (e.g. a model parameter).
/// Each coordinate is restored bit-exactly after its two evaluations.
template <typename Scalar>
RowMatrix<Scalar> finite_diff_grad(const std::function<Scalar(const BasicTensor<Scalar>&)>& f, BasicTensor<Scalar> x,
                                   Scalar step) {
  RowMatrix<Scalar> out(x.value().rows(), x.value().cols());
  auto& v = x.mutable_value();
  for (Index i = 0; i < v.size(); ++i) {
    const Scalar saved = v.data()[i];
    v.data()[i] = saved + step;
    const Scalar plus = f(x);
    v.data()[i] = saved - step;
    const Scalar minus = f(x);
    v.data()[i] = saved;
    out.data()[i] = (plus - minus) / (Scalar(2) * step);
  }
  return out;
}

/// Relative disagreement |a - n| / max(|a|, |n|, floor). The floor keeps
/// coordinates whose true gradient is ~0 from dividing round-off by zero.
template <typename Scalar>
Scalar relative_error(Scalar analytic, Scalar numeric, Scalar floor = Scalar(1e-4)) {
  const Scalar denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

template <typename Scalar>
Scalar max_relative_error(const RowMatrix<Scalar>& analytic, const RowMatrix<Scalar>& numeric,
                          Scalar floor = Scalar(1e-4)) {
  if (analytic.rows() != numeric.rows() || analytic.cols() != numeric.cols()) {
    throw DimensionError("max_relative_error: gradient shapes differ");
  }
  Scalar worst = 0;
  for (Index i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, relative_error(analytic.data()[i], numeric.data()[i], floor));
  }
  return worst;
}

}  // namespace teamoe
