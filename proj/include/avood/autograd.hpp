// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode automatic differentiation over row-major matrices.
//
// Rows index samples and columns index features throughout the library. A
// `Var` is a cheap shared handle to a graph node; parameters are leaf nodes
// with `requires_grad` set, constants are leaves without it. Calling
// `backward(loss)` on a 1x1 result accumulates gradients into every
// reachable parameter.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "avood/error.hpp"

namespace avood::ag {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
struct Node {
  Matrix<T> value;
  Matrix<T> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  void accumulate(const Matrix<T>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

template <class T>
class Var {
 public:
  Var() = default;

  static Var constant(Matrix<T> value) {
    Var v;
    v.node_ = std::make_shared<Node<T>>();
    v.node_->value = std::move(value);
    return v;
  }

  static Var leaf(Matrix<T> value) {
    Var v = constant(std::move(value));
    v.node_->requires_grad = true;
    return v;
  }

  bool defined() const { return node_ != nullptr; }
  bool requires_grad() const { return node_->requires_grad; }
  const Matrix<T>& value() const { return node_->value; }
  Matrix<T>& mutable_value() { return node_->value; }
  const Matrix<T>& grad() const { return node_->grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  T scalar() const { return node_->value(0, 0); }
  void zero_grad() { node_->grad.resize(0, 0); }

  // Cuts the graph: same value, no history.
  Var detach() const { return constant(node_->value); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// A parameter owns its storage: copying a parameter copies the values, so
// models built from parameters have value semantics.
template <class T>
class Param {
 public:
  Param() = default;
  explicit Param(Matrix<T> value) : var_(Var<T>::leaf(std::move(value))) {}
  Param(const Param& other) : var_(Var<T>::leaf(other.var_.value())) {}
  Param& operator=(const Param& other) {
    if (this != &other) var_ = Var<T>::leaf(other.var_.value());
    return *this;
  }
  Param(Param&&) noexcept = default;
  Param& operator=(Param&&) noexcept = default;

  const Var<T>& var() const { return var_; }
  Var<T>& var() { return var_; }
  const Matrix<T>& value() const { return var_.value(); }
  Matrix<T>& mutable_value() { return var_.mutable_value(); }

 private:
  Var<T> var_;
};

namespace detail {

template <class T>
Var<T> make_result(Matrix<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> fn) {
  Var<T> out = Var<T>::constant(std::move(value));
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (auto& in : inputs) node.parents.push_back(in.node());
  node.backward_fn = std::move(fn);
  return out;
}

template <class T>
void push(Node<T>& self, std::size_t i, const Matrix<T>& g) {
  auto& p = *self.parents[i];
  if (p.requires_grad) p.accumulate(g);
}

inline void check_same_shape(Eigen::Index r1, Eigen::Index c1, Eigen::Index r2, Eigen::Index c2) {
  if (r1 != r2 || c1 != c2) {
    throw ValidationError(ValidationError::Code::kDimensionMismatch, "operand shapes differ");
  }
}

}  // namespace detail

template <class T>
void backward(const Var<T>& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ValidationError(ValidationError::Code::kDimensionMismatch, "backward expects a 1x1 loss");
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->accumulate(Matrix<T>::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>& n = **it;
    if (n.backward_fn && n.grad.size() != 0) n.backward_fn(n);
  }
  // Interior gradients are only needed during the sweep.
  for (Node<T>* n : order) {
    if (n->backward_fn) n->grad.resize(0, 0);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != b.rows()) {
    throw ValidationError(ValidationError::Code::kDimensionMismatch, "matmul inner dimensions differ");
  }
  return detail::make_result<T>(a.value() * b.value(), {a, b}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    detail::push<T>(self, 0, self.grad * bv.transpose());
    detail::push<T>(self, 1, av.transpose() * self.grad);
  });
}

template <class T>
Var<T> transpose(const Var<T>& a) {
  return detail::make_result<T>(a.value().transpose(), {a}, [](Node<T>& self) {
    detail::push<T>(self, 0, self.grad.transpose());
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a.rows(), a.cols(), b.rows(), b.cols());
  return detail::make_result<T>(a.value() + b.value(), {a, b}, [](Node<T>& self) {
    detail::push<T>(self, 0, self.grad);
    detail::push<T>(self, 1, self.grad);
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a.rows(), a.cols(), b.rows(), b.cols());
  return detail::make_result<T>(a.value() - b.value(), {a, b}, [](Node<T>& self) {
    detail::push<T>(self, 0, self.grad);
    detail::push<T>(self, 1, Matrix<T>(-self.grad));
  });
}

// Elementwise product.
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a.rows(), a.cols(), b.rows(), b.cols());
  return detail::make_result<T>(a.value().cwiseProduct(b.value()), {a, b}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    detail::push<T>(self, 0, self.grad.cwiseProduct(bv));
    detail::push<T>(self, 1, self.grad.cwiseProduct(av));
  });
}

// Elementwise quotient.
template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a.rows(), a.cols(), b.rows(), b.cols());
  return detail::make_result<T>(a.value().cwiseQuotient(b.value()), {a, b}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    detail::push<T>(self, 0, self.grad.cwiseQuotient(bv));
    Matrix<T> gb = -self.grad.cwiseProduct(av).cwiseQuotient(bv.cwiseProduct(bv));
    detail::push<T>(self, 1, gb);
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T c) {
  return detail::make_result<T>(a.value() * c, {a}, [c](Node<T>& self) {
    detail::push<T>(self, 0, Matrix<T>(self.grad * c));
  });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T c) {
  Matrix<T> v = a.value().array() + c;
  return detail::make_result<T>(std::move(v), {a}, [](Node<T>& self) {
    detail::push<T>(self, 0, self.grad);
  });
}

// Adds a 1xN row vector to every row of an MxN matrix.
template <class T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ValidationError(ValidationError::Code::kDimensionMismatch, "add_row expects a 1xN row");
  }
  Matrix<T> v = a.value().rowwise() + row.value().row(0);
  return detail::make_result<T>(std::move(v), {a, row}, [](Node<T>& self) {
    detail::push<T>(self, 0, self.grad);
    detail::push<T>(self, 1, Matrix<T>(self.grad.colwise().sum()));
  });
}

// Multiplies every column of an MxN matrix by the matching entry of an Mx1 column.
template <class T>
Var<T> mul_col(const Var<T>& a, const Var<T>& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) {
    throw ValidationError(ValidationError::Code::kDimensionMismatch, "mul_col expects an Mx1 column");
  }
  Matrix<T> v = a.value().array().colwise() * col.value().col(0).array();
  return detail::make_result<T>(std::move(v), {a, col}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& cv = self.parents[1]->value;
    Matrix<T> ga = self.grad.array().colwise() * cv.col(0).array();
    detail::push<T>(self, 0, ga);
    detail::push<T>(self, 1, Matrix<T>(self.grad.cwiseProduct(av).rowwise().sum()));
  });
}

template <class T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
  if (a.rows() != b.rows()) {
    throw ValidationError(ValidationError::Code::kDimensionMismatch, "concat_cols row counts differ");
  }
  Matrix<T> v(a.rows(), a.cols() + b.cols());
  v << a.value(), b.value();
  const Eigen::Index split = a.cols();
  return detail::make_result<T>(std::move(v), {a, b}, [split](Node<T>& self) {
    detail::push<T>(self, 0, Matrix<T>(self.grad.leftCols(split)));
    detail::push<T>(self, 1, Matrix<T>(self.grad.rightCols(self.grad.cols() - split)));
  });
}

template <class T>
Var<T> concat_rows(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != b.cols()) {
    throw ValidationError(ValidationError::Code::kDimensionMismatch, "concat_rows column counts differ");
  }
  Matrix<T> v(a.rows() + b.rows(), a.cols());
  v << a.value(), b.value();
  const Eigen::Index split = a.rows();
  return detail::make_result<T>(std::move(v), {a, b}, [split](Node<T>& self) {
    detail::push<T>(self, 0, Matrix<T>(self.grad.topRows(split)));
    detail::push<T>(self, 1, Matrix<T>(self.grad.bottomRows(self.grad.rows() - split)));
  });
}

template <class T>
Var<T> slice_cols(const Var<T>& a, Eigen::Index start, Eigen::Index count) {
  Matrix<T> v = a.value().middleCols(start, count);
  const Eigen::Index total = a.cols();
  return detail::make_result<T>(std::move(v), {a}, [start, count, total](Node<T>& self) {
    Matrix<T> g = Matrix<T>::Zero(self.grad.rows(), total);
    g.middleCols(start, count) = self.grad;
    detail::push<T>(self, 0, g);
  });
}

template <class T>
Var<T> slice_rows(const Var<T>& a, Eigen::Index start, Eigen::Index count) {
  Matrix<T> v = a.value().middleRows(start, count);
  const Eigen::Index total = a.rows();
  return detail::make_result<T>(std::move(v), {a}, [start, count, total](Node<T>& self) {
    Matrix<T> g = Matrix<T>::Zero(total, self.grad.cols());
    g.middleRows(start, count) = self.grad;
    detail::push<T>(self, 0, g);
  });
}

// Selects rows by index (repeats allowed); gradients scatter-add back.
template <class T>
Var<T> gather_rows(const Var<T>& a, std::vector<Eigen::Index> index) {
  Matrix<T> v(static_cast<Eigen::Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = a.value().row(index[i]);
  const Eigen::Index total = a.rows();
  return detail::make_result<T>(std::move(v), {a}, [index = std::move(index), total](Node<T>& self) {
    Matrix<T> g = Matrix<T>::Zero(total, self.grad.cols());
    for (std::size_t i = 0; i < index.size(); ++i) g.row(index[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    detail::push<T>(self, 0, g);
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Var<T> sum_all(const Var<T>& a) {
  Matrix<T> v(1, 1);
  v(0, 0) = a.value().sum();
  return detail::make_result<T>(std::move(v), {a}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    detail::push<T>(self, 0, Matrix<T>::Constant(av.rows(), av.cols(), self.grad(0, 0)));
  });
}

template <class T>
Var<T> mean_all(const Var<T>& a) {
  const T n = static_cast<T>(a.value().size());
  return scale(sum_all(a), T(1) / n);
}

// Row sums: MxN -> Mx1.
template <class T>
Var<T> sum_rows(const Var<T>& a) {
  Matrix<T> v = a.value().rowwise().sum();
  return detail::make_result<T>(std::move(v), {a}, [](Node<T>& self) {
    const auto cols = self.parents[0]->value.cols();
    Matrix<T> g = self.grad.col(0).replicate(1, cols);
    detail::push<T>(self, 0, g);
  });
}

// Euclidean norm of each row: MxN -> Mx1. The subgradient at 0 is 0.
template <class T>
Var<T> row_norm(const Var<T>& a) {
  Matrix<T> v = a.value().rowwise().norm();
  return detail::make_result<T>(v, {a}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& nv = self.value;
    Matrix<T> g(av.rows(), av.cols());
    for (Eigen::Index i = 0; i < av.rows(); ++i) {
      const T n = nv(i, 0);
      if (n > T(0)) {
        g.row(i) = av.row(i) * (self.grad(i, 0) / n);
      } else {
        g.row(i).setZero();
      }
    }
    detail::push<T>(self, 0, g);
  });
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

template <class T>
Var<T> leaky_relu(const Var<T>& a, T slope) {
  Matrix<T> v = a.value().unaryExpr([slope](T x) { return x > T(0) ? x : slope * x; });
  return detail::make_result<T>(std::move(v), {a}, [slope](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    Matrix<T> g = self.grad.binaryExpr(av, [slope](T gi, T x) { return x > T(0) ? gi : slope * gi; });
    detail::push<T>(self, 0, g);
  });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  return leaky_relu(a, T(0));
}

template <class T>
Var<T> square(const Var<T>& a) {
  return detail::make_result<T>(a.value().cwiseAbs2(), {a}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    detail::push<T>(self, 0, Matrix<T>(T(2) * self.grad.cwiseProduct(av)));
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  Matrix<T> v = a.value().unaryExpr([](T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
  });
  return detail::make_result<T>(v, {a}, [](Node<T>& self) {
    const auto& s = self.value;
    Matrix<T> g = self.grad.array() * s.array() * (T(1) - s.array());
    detail::push<T>(self, 0, g);
  });
}

// Row-wise softmax.
template <class T>
Matrix<T> softmax_value(const Matrix<T>& logits) {
  Matrix<T> p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

template <class T>
Matrix<T> log_softmax_value(const Matrix<T>& logits) {
  Matrix<T> shifted = logits.colwise() - logits.rowwise().maxCoeff();
  Eigen::Matrix<T, Eigen::Dynamic, 1> lse = shifted.array().exp().rowwise().sum().log();
  shifted.colwise() -= lse;
  return shifted;
}

template <class T>
Var<T> softmax(const Var<T>& logits) {
  return detail::make_result<T>(softmax_value(logits.value()), {logits}, [](Node<T>& self) {
    const auto& p = self.value;
    Eigen::Matrix<T, Eigen::Dynamic, 1> dot = self.grad.cwiseProduct(p).rowwise().sum();
    Matrix<T> g = p.cwiseProduct(Matrix<T>(self.grad.colwise() - dot));
    detail::push<T>(self, 0, g);
  });
}

template <class T>
Var<T> log_softmax(const Var<T>& logits) {
  return detail::make_result<T>(log_softmax_value(logits.value()), {logits}, [](Node<T>& self) {
    Matrix<T> p = self.value.array().exp();
    Eigen::Matrix<T, Eigen::Dynamic, 1> total = self.grad.rowwise().sum();
    Matrix<T> g = self.grad - Matrix<T>(p.array().colwise() * total.array());
    detail::push<T>(self, 0, g);
  });
}

// Row-wise layer normalization with learned gain and bias (both 1xN).
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
  const auto& xv = x.value();
  Eigen::Matrix<T, Eigen::Dynamic, 1> mean = xv.rowwise().mean();
  Matrix<T> centered = xv.colwise() - mean;
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std =
      (centered.cwiseAbs2().rowwise().mean().array() + eps).rsqrt();
  Matrix<T> normed = centered.array().colwise() * inv_std.array();
  Matrix<T> out = (normed.array().rowwise() * gain.value().row(0).array()).rowwise() +
                  bias.value().row(0).array();
  return detail::make_result<T>(
      std::move(out), {x, gain, bias}, [normed, inv_std](Node<T>& self) {
        const auto& gv = self.parents[1]->value;
        Matrix<T> dnormed = self.grad.array().rowwise() * gv.row(0).array();
        Eigen::Matrix<T, Eigen::Dynamic, 1> m1 = dnormed.rowwise().mean();
        Eigen::Matrix<T, Eigen::Dynamic, 1> m2 = dnormed.cwiseProduct(normed).rowwise().mean();
        Matrix<T> dx = dnormed.colwise() - m1;
        dx -= Matrix<T>(normed.array().colwise() * m2.array());
        dx = dx.array().colwise() * inv_std.array();
        detail::push<T>(self, 0, dx);
        detail::push<T>(self, 1, Matrix<T>(self.grad.cwiseProduct(normed).colwise().sum()));
        detail::push<T>(self, 2, Matrix<T>(self.grad.colwise().sum()));
      });
}

// Numerically stable binary cross-entropy on logits against constant targets,
// elementwise.
template <class T>
Var<T> bce_with_logits(const Var<T>& logits, const Matrix<T>& targets) {
  detail::check_same_shape(logits.rows(), logits.cols(), targets.rows(), targets.cols());
  Matrix<T> v = logits.value().binaryExpr(targets, [](T l, T y) {
    return std::max(l, T(0)) - l * y + std::log1p(std::exp(-std::abs(l)));
  });
  return detail::make_result<T>(std::move(v), {logits}, [targets](Node<T>& self) {
    const auto& lv = self.parents[0]->value;
    Matrix<T> s = lv.unaryExpr([](T x) {
      if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
      const T e = std::exp(x);
      return e / (T(1) + e);
    });
    detail::push<T>(self, 0, Matrix<T>(self.grad.cwiseProduct(s - targets)));
  });
}

// ---------------------------------------------------------------------------
// Composite helpers

template <class T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  return mean_all(square(sub(a, b)));
}

// Per-row entropy of the softmax of `logits` (natural log): MxK -> Mx1.
template <class T>
Var<T> softmax_entropy(const Var<T>& logits) {
  Var<T> logp = log_softmax(logits);
  Var<T> p = softmax(logits);
  return scale(sum_rows(mul(p, logp)), T(-1));
}

// Mean cross-entropy of softmax(logits) against integer class indices.
template <class T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& targets) {
  Matrix<T> onehot = Matrix<T>::Zero(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < targets.size(); ++i) onehot(static_cast<Eigen::Index>(i), targets[i]) = T(1);
  Var<T> picked = sum_rows(mul(log_softmax(logits), Var<T>::constant(std::move(onehot))));
  return scale(mean_all(picked), T(-1));
}

}  // namespace avood::ag
