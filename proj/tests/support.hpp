// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <unistd.h>
#include <string>
#include <vector>

#include "avood/autograd.hpp"
#include "avood/nn.hpp"
#include "avood/rng.hpp"

namespace avood::testing {

using ag::Matrix;
using ag::Var;

// Norm-wise relative error between analytic and central-difference gradients
// of a scalar loss with respect to every entry of `params`.
inline double gradient_error(const nn::NamedParams<double>& params, const std::function<Var<double>()>& loss_fn,
                             double h = 1e-6) {
  for (auto& [name, p] : params) p->var().zero_grad();
  Var<double> loss = loss_fn();
  ag::backward(loss);

  std::vector<double> analytic;
  std::vector<double> numeric;
  for (auto& [name, p] : params) {
    const Matrix<double> g = p->var().grad().size() ? p->var().grad() : Matrix<double>::Zero(p->value().rows(), p->value().cols());
    for (Eigen::Index i = 0; i < p->value().size(); ++i) {
      analytic.push_back(g.data()[i]);
      double& x = p->mutable_value().data()[i];
      const double saved = x;
      x = saved + h;
      const double up = loss_fn().scalar();
      x = saved - h;
      const double down = loss_fn().scalar();
      x = saved;
      numeric.push_back((up - down) / (2.0 * h));
    }
    p->var().zero_grad();
  }
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
}

inline std::size_t count_values(const nn::NamedParams<double>& params) {
  std::size_t n = 0;
  for (const auto& [name, p] : params) n += static_cast<std::size_t>(p->value().size());
  return n;
}

inline Matrix<double> random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("avood_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace avood::testing
