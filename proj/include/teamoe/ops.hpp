// Copyright (c) 2026, The teamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations on BasicTensor. Every operation checks shapes up
// front and throws DimensionError naming the offending shapes.

#pragma once

#include "teamoe/tensor.hpp"

#include <cmath>
#include <random>
#include <span>

namespace teamoe {

namespace detail {

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + " tensor, got " +
                         shape_str(s));
  }
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) + " differ");
}

template <typename Scalar>
void require_finite(const RowMatrix<Scalar>& m, const char* op) {
  if (!m.allFinite()) throw NumericError(std::string(op) + ": input contains NaN or Inf");
}

}  // namespace detail

/// [m x k] * [k x n] -> [m x n].
template <typename Scalar>
BasicTensor<Scalar> matmul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_rank(a.shape(), 2, "matmul");
  detail::require_rank(b.shape(), 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions of " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " disagree");
  }
  RowMatrix<Scalar> out = a.value() * b.value();
  auto av = a.node_ptr();
  auto bv = b.node_ptr();
  return record<Scalar>(Shape{a.dim(0), b.dim(1)}, std::move(out), {a, b},
                        [av, bv](const RowMatrix<Scalar>& g, std::vector<RowMatrix<Scalar>*>& slots) {
                          if (slots[0]) slots[0]->noalias() += g * bv->value.transpose();
                          if (slots[1]) slots[1]->noalias() += av->value.transpose() * g;
                        });
}

template <typename Scalar>
BasicTensor<Scalar> transpose(const BasicTensor<Scalar>& a) {
  detail::require_rank(a.shape(), 2, "transpose");
  RowMatrix<Scalar> out = a.value().transpose();
  return record<Scalar>(Shape{a.dim(1), a.dim(0)}, std::move(out), {a},
                        [](const RowMatrix<Scalar>& g, std::vector<RowMatrix<Scalar>*>& slots) {
                          *slots[0] += g.transpose();
                        });
}

template <typename Scalar>
BasicTensor<Scalar> add(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same(a.shape(), b.shape(), "add");
  RowMatrix<Scalar> out = a.value() + b.value();
  return record<Scalar>(a.shape(), std::move(out), {a, b},
                        [](const RowMatrix<Scalar>& g, std::vector<RowMatrix<Scalar>*>& slots) {
                          if (slots[0]) *slots[0] += g;
                          if (slots[1]) *slots[1] += g;
                        });
}

template <typename Scalar>
BasicTensor<Scalar> sub(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same(a.shape(), b.shape(), "sub");
  RowMatrix<Scalar> out = a.value() - b.value();
  return record<Scalar>(a.shape(), std::move(out), {a, b},
                        [](const RowMatrix<Scalar>& g, std::vector<RowMatrix<Scalar>*>& slots) {
                          if (slots[0]) *slots[0] += g;
                          if (slots[1]) *slots[1] -= g;
                        });
}

/// Elementwise (Hadamard) product.
template <typename Scalar>
BasicTensor<Scalar> mul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_same(a.shape(), b.shape(), "mul");
  RowMatrix<Scalar> out = a.value().cwiseProduct(b.value());
  auto av = a.node_ptr();
  auto bv = b.node_ptr();
  return record<Scalar>(a.shape(), std::move(out), {a, b},
                        [av, bv](const RowMatrix<Scalar>& g, std::vector<RowMatrix<Scalar>*>& slots) {
                          if (slots[0]) *slots[0] += g.cwiseProduct(bv->value);
                          if (slots[1]) *slots[1] += g.cwiseProduct(av->value);
                        });
}

/// Multiplication by a fixed constant.
template <typename Scalar>
BasicTensor<Scalar> scale(const BasicTensor<Scalar>& a, Scalar c) {
  RowMatrix<Scalar> out = a.value() * c;
  return record<Scalar>(a.shape(), std::move(out), {a},
                        [c](const RowMatrix<Scalar>& g, std::vector<RowMatrix<Scalar>*>& slots) {
                          *slots[0] += g * c;
                        });
}

/// Broadcasts a one-element tensor `s` over every element of `a`.
template <typename Scalar>
BasicTensor<Scalar> mul_scalar(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& s) {
  if (!s.is_scalar()) throw DimensionError("mul_scalar: expected one-element factor, got " + shape_str(s.shape()));
  const Scalar sv = s.item();
  RowMatrix<Scalar> out = a.value() * sv;
  auto av = a.node_ptr();
  return record<Scalar>(a.shape(), std::move(out), {a, s},
                        [av, sv](const RowMatrix<Scalar>& g, std::vector<RowMatrix<Scalar>*>& slots) {
                          if (slots[0]) *slots[0] += g * sv;
                          if (slots[1]) (*slots[1])(0, 0) += g.cwiseProduct(av->value).sum();
                        });
}

/// Adds a rank-1 [n] tensor to every row of an [m x n] tensor.
template <typename Scalar>
BasicTensor<Scalar> add_row(const BasicTensor<Scalar>& m, const BasicTensor<Scalar>& v) {
  detail::require_rank(m.shape(), 2, "add_row");
  detail::require_rank(v.shape(), 1, "add_row");
  if (m.dim(1) != v.dim(0)) {
    throw DimensionError("add_row: " + shape_str(v.shape()) + " cannot broadcast over " + shape_str(m.shape()));
  }
  RowMatrix<Scalar> out = m.value().rowwise() + v.value().row(0);
  return record<Scalar>(m.shape(), std::move(out), {m, v},
                        [](const RowMatrix<Scalar>& g, std::vector<RowMatrix<Scalar>*>& slots) {
                          if (slots[0]) *slots[0] += g;
                          if (slots[1]) *slots[1] += g.colwise().sum();
                        });
}

template <typename Scalar>
BasicTensor<Scalar> relu(const BasicTensor<Scalar>& a) {
  RowMatrix<Scalar> out = a.value().cwiseMax(Scalar(0));
  auto av = a.node_ptr();
  return record<Scalar>(a.shape(), std::move(out), {a},
                        [av](const RowMatrix<Scalar>& g, std::vector<RowMatrix<Scalar>*>& slots) {
                          *slots[0] += (av->value.array() > Scalar(0)).select(g, Scalar(0)).matrix();
                        });
}

template <typename Scalar>
BasicTensor<Scalar> sum(const BasicTensor<Scalar>& a) {
  RowMatrix<Scalar> out = RowMatrix<Scalar>::Constant(1, 1, a.value().sum());
  return record<Scalar>(Shape{}, std::move(out), {a},
                        [](const RowMatrix<Scalar>& g, std::vector<RowMatrix<Scalar>*>& slots) {
                          slots[0]->array() += g(0, 0);
                        });
}

template <typename Scalar>
BasicTensor<Scalar> mean(const BasicTensor<Scalar>& a) {
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.numel()));
}

/// Same data under a new shape of equal element count.
template <typename Scalar>
BasicTensor<Scalar> reshape(const BasicTensor<Scalar>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  auto [rows, cols] = storage_dims(shape);
  RowMatrix<Scalar> out = Eigen::Map<const RowMatrix<Scalar>>(a.value().data(), rows, cols);
  const Index in_rows = a.value().rows();
  const Index in_cols = a.value().cols();
  return record<Scalar>(std::move(shape), std::move(out), {a},
                        [in_rows, in_cols](const RowMatrix<Scalar>& g, std::vector<RowMatrix<Scalar>*>& slots) {
                          *slots[0] += Eigen::Map<const RowMatrix<Scalar>>(g.data(), in_rows, in_cols);
                        });
}

/// Row `i` of a rank-2 table as a rank-1 tensor (embedding lookup). Only that
/// row of the table receives gradient.
template <typename Scalar>
BasicTensor<Scalar> row(const BasicTensor<Scalar>& table, Index i) {
  detail::require_rank(table.shape(), 2, "row");
  if (i < 0 || i >= table.dim(0)) {
    throw DataError("row: index " + std::to_string(i) + " outside table of shape " + shape_str(table.shape()));
  }
  RowMatrix<Scalar> out = table.value().row(i);
  return record<Scalar>(Shape{table.dim(1)}, std::move(out), {table},
                        [i](const RowMatrix<Scalar>& g, std::vector<RowMatrix<Scalar>*>& slots) {
                          slots[0]->row(i) += g.row(0);
                        });
}

/// Element `i` of a rank-1 tensor as a scalar tensor.
template <typename Scalar>
BasicTensor<Scalar> select(const BasicTensor<Scalar>& v, Index i) {
  detail::require_rank(v.shape(), 1, "select");
  if (i < 0 || i >= v.dim(0)) {
    throw DataError("select: index " + std::to_string(i) + " outside " + shape_str(v.shape()));
  }
  RowMatrix<Scalar> out = RowMatrix<Scalar>::Constant(1, 1, v.value()(0, i));
  return record<Scalar>(Shape{}, std::move(out), {v},
                        [i](const RowMatrix<Scalar>& g, std::vector<RowMatrix<Scalar>*>& slots) {
                          (*slots[0])(0, i) += g(0, 0);
                        });
}

/// Rows [begin, begin + count) of a rank-2 tensor.
template <typename Scalar>
BasicTensor<Scalar> slice_rows(const BasicTensor<Scalar>& a, Index begin, Index count) {
  detail::require_rank(a.shape(), 2, "slice_rows");
  if (begin < 0 || count <= 0 || begin + count > a.dim(0)) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_str(a.shape()));
  }
  RowMatrix<Scalar> out = a.value().middleRows(begin, count);
  return record<Scalar>(Shape{count, a.dim(1)}, std::move(out), {a},
                        [begin, count](const RowMatrix<Scalar>& g, std::vector<RowMatrix<Scalar>*>& slots) {
                          slots[0]->middleRows(begin, count) += g;
                        });
}

/// Joins two rank-1 tensors end to end.
template <typename Scalar>
BasicTensor<Scalar> concat(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  detail::require_rank(a.shape(), 1, "concat");
  detail::require_rank(b.shape(), 1, "concat");
  const Index na = a.dim(0);
  const Index nb = b.dim(0);
  RowMatrix<Scalar> out(1, na + nb);
  out << a.value(), b.value();
  return record<Scalar>(Shape{na + nb}, std::move(out), {a, b},
                        [na, nb](const RowMatrix<Scalar>& g, std::vector<RowMatrix<Scalar>*>& slots) {
                          if (slots[0]) *slots[0] += g.leftCols(na);
                          if (slots[1]) *slots[1] += g.rightCols(nb);
                        });
}

/// Numerically stable softmax over a rank-1 tensor.
template <typename Scalar>
BasicTensor<Scalar> softmax(const BasicTensor<Scalar>& v) {
  detail::require_rank(v.shape(), 1, "softmax");
  detail::require_finite(v.value(), "softmax");
  RowMatrix<Scalar> e = (v.value().array() - v.value().maxCoeff()).exp().matrix();
  RowMatrix<Scalar> out = e / e.sum();
  RowMatrix<Scalar> y = out;
  return record<Scalar>(v.shape(), std::move(out), {v},
                        [y](const RowMatrix<Scalar>& g, std::vector<RowMatrix<Scalar>*>& slots) {
                          const Scalar dot = g.cwiseProduct(y).sum();
                          *slots[0] += (y.array() * (g.array() - dot)).matrix();
                        });
}

/// Mean cross-entropy of row-wise logits [m x C] against integer labels.
template <typename Scalar>
BasicTensor<Scalar> cross_entropy(const BasicTensor<Scalar>& logits, std::span<const int> labels) {
  detail::require_rank(logits.shape(), 2, "cross_entropy");
  const Index m = logits.dim(0);
  const Index classes = logits.dim(1);
  if (static_cast<Index>(labels.size()) != m) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_str(logits.shape()));
  }
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw DataError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  detail::require_finite(logits.value(), "cross_entropy");
  const auto& z = logits.value();
  RowMatrix<Scalar> probs(m, classes);
  Scalar total = 0;
  for (Index i = 0; i < m; ++i) {
    const Scalar zmax = z.row(i).maxCoeff();
    auto shifted = (z.row(i).array() - zmax).exp();
    const Scalar norm = shifted.sum();
    probs.row(i) = shifted / norm;
    total += std::log(norm) + zmax - z(i, labels[i]);
  }
  RowMatrix<Scalar> out = RowMatrix<Scalar>::Constant(1, 1, total / static_cast<Scalar>(m));
  std::vector<int> ys(labels.begin(), labels.end());
  return record<Scalar>(Shape{}, std::move(out), {logits},
                        [probs = std::move(probs), ys = std::move(ys), m](const RowMatrix<Scalar>& g,
                                                                          std::vector<RowMatrix<Scalar>*>& slots) {
                          RowMatrix<Scalar> d = probs;
                          for (Index i = 0; i < m; ++i) d(i, ys[static_cast<std::size_t>(i)]) -= Scalar(1);
                          *slots[0] += d * (g(0, 0) / static_cast<Scalar>(m));
                        });
}

/// Inverted dropout: in training, each element is zeroed with probability
/// `rate` and survivors are scaled by 1/(1 - rate); in eval, identity.
template <typename Scalar, typename Rng>
BasicTensor<Scalar> dropout(const BasicTensor<Scalar>& x, Scalar rate, bool training, Rng& rng) {
  if (!(rate >= Scalar(0) && rate < Scalar(1))) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == Scalar(0)) return x;
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  const Scalar inv = Scalar(1) / (Scalar(1) - rate);
  RowMatrix<Scalar> mask(x.value().rows(), x.value().cols());
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? inv : Scalar(0);
  RowMatrix<Scalar> out = x.value().cwiseProduct(mask);
  return record<Scalar>(x.shape(), std::move(out), {x},
                        [mask = std::move(mask)](const RowMatrix<Scalar>& g, std::vector<RowMatrix<Scalar>*>& slots) {
                          *slots[0] += g.cwiseProduct(mask);
                        });
}

}  // namespace teamoe
