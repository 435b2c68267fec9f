// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "avood/autograd.hpp"
#include "avood/error.hpp"
#include "avood/rng.hpp"

namespace avood {

inline constexpr double kDivergenceBound = 1e6;

// Aborts training when a loss is non-finite or exceeds the divergence bound.
inline void guard_loss(double value, std::int64_t step, const char* what) {
  if (!std::isfinite(value) || std::abs(value) > kDivergenceBound) {
    throw DivergenceError(step, std::string(what) + " diverged: " + std::to_string(value));
  }
}

inline std::vector<Eigen::Index> iota_index(Eigen::Index n) {
  std::vector<Eigen::Index> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), Eigen::Index{0});
  return v;
}

// `count` distinct indices drawn uniformly from [0, n) (all of them when count >= n).
inline std::vector<Eigen::Index> sample_without_replacement(Eigen::Index n, Eigen::Index count, Rng& rng) {
  auto idx = iota_index(n);
  const auto k = std::min(count, n);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto j = i + static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(n - i)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

template <class T, class Src>
ag::Matrix<T> take_rows(const Src& m, const std::vector<Eigen::Index>& rows) {
  ag::Matrix<T> out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]).template cast<T>();
  return out;
}

// Splits a permutation of [0, n) into consecutive minibatches.
inline std::vector<std::vector<Eigen::Index>> minibatches(std::vector<Eigen::Index> order, Eigen::Index batch_size) {
  std::vector<std::vector<Eigen::Index>> out;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace avood
