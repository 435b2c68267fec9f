// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "avood/autograd.hpp"
#include "avood/rng.hpp"

namespace avood::nn {

using ag::Matrix;
using ag::Param;
using ag::Var;

template <class T>
using NamedParams = std::vector<std::pair<std::string, Param<T>*>>;

template <class T>
using ConstNamedParams = std::vector<std::pair<std::string, const Param<T>*>>;

template <class T>
Matrix<T> uniform_matrix(Eigen::Index rows, Eigen::Index cols, T bound, Rng& rng) {
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
  return m;
}

template <class T>
Matrix<T> normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev = 1.0) {
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(stddev * rng.normal());
  return m;
}

// Inverted dropout: scales kept units by 1/(1-p). A null rng means eval mode.
template <class T>
Var<T> dropout(const Var<T>& x, double p, Rng* rng) {
  if (rng == nullptr || p <= 0.0) return x;
  Matrix<T> mask(x.rows(), x.cols());
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng->uniform() < p ? T(0) : keep;
  return ag::mul(x, Var<T>::constant(std::move(mask)));
}

// Affine map y = x W + b, W stored as (in x out).
template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(Eigen::Index in, Eigen::Index out, Rng& rng, bool with_bias = true)
      : with_bias_(with_bias) {
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in)));
    weight_ = Param<T>(uniform_matrix<T>(in, out, bound, rng));
    bias_ = Param<T>(with_bias ? uniform_matrix<T>(1, out, bound, rng) : Matrix<T>::Zero(1, out));
  }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> y = ag::matmul(x, weight_.var());
    return with_bias_ ? ag::add_row(y, bias_.var()) : y;
  }

  Eigen::Index in_dim() const { return weight_.value().rows(); }
  Eigen::Index out_dim() const { return weight_.value().cols(); }
  bool has_bias() const { return with_bias_; }

  Param<T>& weight() { return weight_; }
  const Param<T>& weight() const { return weight_; }
  Param<T>& bias() { return bias_; }
  const Param<T>& bias() const { return bias_; }

  void collect(const std::string& prefix, NamedParams<T>& out) {
    out.emplace_back(prefix + ".weight", &weight_);
    if (with_bias_) out.emplace_back(prefix + ".bias", &bias_);
  }

 private:
  Param<T> weight_;
  Param<T> bias_;
  bool with_bias_ = true;
};

template <class T>
class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(Eigen::Index dim)
      : gain_(Matrix<T>::Ones(1, dim)), bias_(Matrix<T>::Zero(1, dim)) {}

  Var<T> operator()(const Var<T>& x) const { return ag::layer_norm(x, gain_.var(), bias_.var()); }

  void collect(const std::string& prefix, NamedParams<T>& out) {
    out.emplace_back(prefix + ".gain", &gain_);
    out.emplace_back(prefix + ".bias", &bias_);
  }

 private:
  Param<T> gain_;
  Param<T> bias_;
};

enum class Activation { kRelu, kLeakyRelu };

inline constexpr double kLeakySlope = 0.2;

// Fully connected network: hidden layers use `activation` followed by dropout,
// the last layer is linear.
template <class T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<Eigen::Index> dims, Activation activation, Rng& rng, double dropout = 0.0)
      : dims_(std::move(dims)), activation_(activation), dropout_(dropout) {
    for (std::size_t i = 0; i + 1 < dims_.size(); ++i) layers_.emplace_back(dims_[i], dims_[i + 1], rng);
  }

  Var<T> operator()(const Var<T>& x, Rng* dropout_rng = nullptr) const {
    Var<T> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i](h);
      if (i + 1 < layers_.size()) {
        h = activate(h);
        h = dropout(h, dropout_, dropout_rng);
      }
    }
    return h;
  }

  // Derivative of each hidden activation at the pre-activations produced by
  // `x` (eval mode). Entry l has the shape of hidden layer l.
  std::vector<Matrix<T>> activation_slopes(const Matrix<T>& x) const {
    std::vector<Matrix<T>> slopes;
    Matrix<T> h = x;
    const T s = slope();
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
      Matrix<T> pre = (h * layers_[i].weight().value()).rowwise() + layers_[i].bias().value().row(0);
      slopes.push_back(pre.unaryExpr([s](T v) { return v > T(0) ? T(1) : s; }));
      h = pre.unaryExpr([s](T v) { return v > T(0) ? v : s * v; });
    }
    return slopes;
  }

  T slope() const { return activation_ == Activation::kRelu ? T(0) : static_cast<T>(kLeakySlope); }
  Eigen::Index in_dim() const { return dims_.front(); }
  Eigen::Index out_dim() const { return dims_.back(); }
  const std::vector<Eigen::Index>& dims() const { return dims_; }
  std::vector<Linear<T>>& layers() { return layers_; }
  const std::vector<Linear<T>>& layers() const { return layers_; }
  double dropout_rate() const { return dropout_; }

  void collect(const std::string& prefix, NamedParams<T>& out) {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + "." + std::to_string(i), out);
  }

 private:
  Var<T> activate(const Var<T>& h) const {
    return activation_ == Activation::kRelu ? ag::relu(h) : ag::leaky_relu(h, static_cast<T>(kLeakySlope));
  }

  std::vector<Eigen::Index> dims_;
  std::vector<Linear<T>> layers_;
  Activation activation_ = Activation::kRelu;
  double dropout_ = 0.0;
};

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
class Adam {
 public:
  Adam(NamedParams<T> params, AdamOptions options) : options_(options) {
    for (auto& [name, p] : params) {
      vars_.push_back(p->var());
      m_.push_back(Matrix<T>::Zero(p->value().rows(), p->value().cols()));
      v_.push_back(Matrix<T>::Zero(p->value().rows(), p->value().cols()));
    }
  }

  void zero_grad() {
    for (auto& v : vars_) v.zero_grad();
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(options_.beta1);
    const T b2 = static_cast<T>(options_.beta2);
    const T step_size = static_cast<T>(options_.learning_rate / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(options_.eps);
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      const Matrix<T>& g = vars_[i].grad();
      if (g.size() == 0) continue;
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseAbs2();
      Matrix<T> denom = (v_[i] * inv_c2).cwiseSqrt().array() + eps;
      vars_[i].mutable_value() -= step_size * m_[i].cwiseQuotient(denom);
    }
  }

 private:
  AdamOptions options_;
  std::vector<Var<T>> vars_;
  std::vector<Matrix<T>> m_;
  std::vector<Matrix<T>> v_;
  long t_ = 0;
};

}  // namespace avood::nn
