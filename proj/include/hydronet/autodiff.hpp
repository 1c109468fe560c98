#pragma once

// Define-by-run reverse-mode differentiation over dense row-major matrices.
//
// Every value is a 2-D matrix. Higher-rank tensors are flattened onto rows:
// a [T x N x C] activation is stored as (T*N) x C with row t*N + n, which is
// what lets a temporal convolution become a sum of contiguous row-block
// products. Broadcasting is limited to a 1 x C right operand (bias add).

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hydronet/error.hpp"

namespace hydronet::ad {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid while the tape lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Matrix<Scalar>& value() const { return tape_->value(id_); }
  /// Empty (0 x 0) until a backward pass reaches this value.
  const Matrix<Scalar>& grad() const { return tape_->grad(id_); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class Tape {
 public:
  using MatrixType = Matrix<Scalar>;
  using BackwardFn = std::function<void(Tape&, const MatrixType&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf value. Differentiable leaves keep their gradient across backward calls.
  Var<Scalar> variable(MatrixType value, bool requires_grad = true) {
    nodes_.push_back({std::move(value), {}, requires_grad, true, {}});
    return {this, nodes_.size() - 1};
  }
  Var<Scalar> constant(MatrixType value) { return variable(std::move(value), false); }

  /// Appends an op result. `backward` receives the output gradient and must
  /// push input gradients through accumulate(). Skipped when no input is
  /// differentiable.
  Var<Scalar> record(MatrixType value, std::initializer_list<Var<Scalar>> inputs, BackwardFn backward) {
    return record(std::move(value), std::span<const Var<Scalar>>(inputs.begin(), inputs.size()), std::move(backward));
  }

  Var<Scalar> record(MatrixType value, std::span<const Var<Scalar>> inputs, BackwardFn backward) {
    bool needs = false;
    for (const auto& v : inputs) {
      if (&v.tape() != this) throw Error(ErrorCode::ShapeMismatch, "operands live on different tapes");
      needs = needs || requires_grad(v.id());
    }
    nodes_.push_back({std::move(value), {}, needs, false, needs ? std::move(backward) : BackwardFn{}});
    return {this, nodes_.size() - 1};
  }

  template <typename Derived>
  void accumulate(const Var<Scalar>& v, const Eigen::MatrixBase<Derived>& g) {
    auto& node = nodes_[v.id()];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0)
      node.grad = g;
    else
      node.grad += g;
  }

  /// Reverse sweep from a scalar. Intermediate gradients are reset first;
  /// leaf gradients accumulate across calls until zero_grad().
  void backward(const Var<Scalar>& loss) {
    if (nodes_.empty()) throw Error(ErrorCode::EmptyTape, "nothing recorded");
    if (&loss.tape() != this) throw Error(ErrorCode::EmptyTape, "loss was recorded on another tape");
    const auto& lv = value(loss.id());
    if (lv.rows() != 1 || lv.cols() != 1)
      throw Error(ErrorCode::NotScalar, "loss has shape " + std::to_string(lv.rows()) + "x" +
                                            std::to_string(lv.cols()));
    for (auto& node : nodes_)
      if (!node.leaf) node.grad.resize(0, 0);
    accumulate(loss, MatrixType::Ones(1, 1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      auto& node = nodes_[i];
      if (node.backward && node.grad.size() != 0) node.backward(*this, node.grad);
    }
  }

  void zero_grad() {
    for (auto& node : nodes_) node.grad.resize(0, 0);
  }

  std::size_t size() const { return nodes_.size(); }
  const MatrixType& value(std::size_t id) const { return nodes_[id].value; }
  const MatrixType& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    MatrixType value;
    MatrixType grad;
    bool requires_grad;
    bool leaf;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

namespace detail {

inline std::string shape(Index r, Index c) { return std::to_string(r) + "x" + std::to_string(c); }

template <typename Scalar>
void require_same_or_row(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  const bool same = a.rows() == b.rows() && a.cols() == b.cols();
  const bool row = b.rows() == 1 && a.cols() == b.cols();
  if (!same && !row)
    throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + shape(a.rows(), a.cols()) + " vs " +
                                              shape(b.rows(), b.cols()));
}

template <typename Scalar>
bool broadcasts(const Var<Scalar>& a, const Var<Scalar>& b) {
  return b.rows() == 1 && a.rows() != 1;
}

template <typename Scalar, typename ValueFn, typename DerivFn>
Var<Scalar> unary(const Var<Scalar>& a, ValueFn f, DerivFn df) {
  Matrix<Scalar> out = a.value().unaryExpr(f);
  return a.tape().record(std::move(out), {a}, [a, df](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    const auto& x = a.value();
    Matrix<Scalar> local(x.rows(), x.cols());
    for (Index i = 0; i < x.size(); ++i) local.data()[i] = df(x.data()[i]);
    t.accumulate(a, g.cwiseProduct(local));
  });
}

}  // namespace detail

/// [m x k] . [k x n]
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.cols() != b.rows())
    throw Error(ErrorCode::ShapeMismatch, "matmul: " + detail::shape(a.rows(), a.cols()) + " . " +
                                              detail::shape(b.rows(), b.cols()));
  Matrix<Scalar> out = a.value() * b.value();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
  });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_or_row(a, b, "add");
  const bool bc = detail::broadcasts(a, b);
  Matrix<Scalar> out = bc ? Matrix<Scalar>(a.value().rowwise() + b.value().row(0)) : Matrix<Scalar>(a.value() + b.value());
  return a.tape().record(std::move(out), {a, b}, [a, b, bc](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, g);
    if (bc)
      t.accumulate(b, g.colwise().sum());
    else
      t.accumulate(b, g);
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_or_row(a, b, "sub");
  const bool bc = detail::broadcasts(a, b);
  Matrix<Scalar> out = bc ? Matrix<Scalar>(a.value().rowwise() - b.value().row(0)) : Matrix<Scalar>(a.value() - b.value());
  return a.tape().record(std::move(out), {a, b}, [a, b, bc](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, g);
    if (bc)
      t.accumulate(b, -g.colwise().sum());
    else
      t.accumulate(b, -g);
  });
}

/// Hadamard product.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::require_same_or_row(a, b, "mul");
  const bool bc = detail::broadcasts(a, b);
  Matrix<Scalar> out = bc ? Matrix<Scalar>(a.value().array().rowwise() * b.value().row(0).array())
                          : Matrix<Scalar>(a.value().cwiseProduct(b.value()));
  return a.tape().record(std::move(out), {a, b}, [a, b, bc](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    if (bc) {
      if (a.requires_grad()) t.accumulate(a, Matrix<Scalar>(g.array().rowwise() * b.value().row(0).array()));
      if (b.requires_grad()) t.accumulate(b, g.cwiseProduct(a.value()).colwise().sum());
    } else {
      if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(b.value()));
      if (b.requires_grad()) t.accumulate(b, g.cwiseProduct(a.value()));
    }
  });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  Matrix<Scalar> out = a.value() * s;
  return a.tape().record(std::move(out), {a},
                         [a, s](Tape<Scalar>& t, const Matrix<Scalar>& g) { t.accumulate(a, g * s); });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& a) {
  const auto f = [](Scalar x) {
    // Split on sign so exp never overflows.
    if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
    const Scalar e = std::exp(x);
    return e / (Scalar(1) + e);
  };
  Matrix<Scalar> out = a.value().unaryExpr(f);
  const auto id_out = a.tape().size();
  return a.tape().record(std::move(out), {a}, [a, id_out](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    const auto& s = t.value(id_out);
    t.accumulate(a, Matrix<Scalar>(g.array() * s.array() * (Scalar(1) - s.array())));
  });
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& a) {
  Matrix<Scalar> out = a.value().array().tanh().matrix();
  const auto id_out = a.tape().size();
  return a.tape().record(std::move(out), {a}, [a, id_out](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    const auto& y = t.value(id_out);
    t.accumulate(a, Matrix<Scalar>(g.array() * (Scalar(1) - y.array().square())));
  });
}

/// Subgradient 0 at the kink.
template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  return detail::unary(
      a, [](Scalar x) { return x > 0 ? x : Scalar(0); }, [](Scalar x) { return x > 0 ? Scalar(1) : Scalar(0); });
}

/// Subgradient 0 at 0.
template <typename Scalar>
Var<Scalar> abs(const Var<Scalar>& a) {
  return detail::unary(
      a, [](Scalar x) { return std::abs(x); },
      [](Scalar x) { return x > 0 ? Scalar(1) : (x < 0 ? Scalar(-1) : Scalar(0)); });
}

template <typename Scalar>
Var<Scalar> square(const Var<Scalar>& a) {
  return detail::unary(a, [](Scalar x) { return x * x; }, [](Scalar x) { return 2 * x; });
}

/// 1 x 1 sum of all elements.
template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record(std::move(out), {a}, [a](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    t.accumulate(a, Matrix<Scalar>::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  if (a.value().size() == 0) throw Error(ErrorCode::ShapeMismatch, "mean of an empty tensor");
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.value().size()));
}

/// Concatenation along rows (axis 0) or columns (axis 1).
template <typename Scalar>
Var<Scalar> concat(std::span<const Var<Scalar>> parts, int axis) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of nothing");
  if (axis != 0 && axis != 1) throw Error(ErrorCode::ShapeMismatch, "concat axis must be 0 or 1");
  if (parts.size() == 1) return parts.front();
  Index rows = 0, cols = 0;
  for (const auto& p : parts) {
    const bool ok = axis == 0 ? p.cols() == parts.front().cols() : p.rows() == parts.front().rows();
    if (!ok)
      throw Error(ErrorCode::ShapeMismatch, "concat: " + detail::shape(p.rows(), p.cols()) + " does not fit " +
                                                detail::shape(parts.front().rows(), parts.front().cols()));
    rows = axis == 0 ? rows + p.rows() : p.rows();
    cols = axis == 1 ? cols + p.cols() : p.cols();
  }
  Matrix<Scalar> out(rows, cols);
  Index offset = 0;
  for (const auto& p : parts) {
    if (axis == 0) {
      out.middleRows(offset, p.rows()) = p.value();
      offset += p.rows();
    } else {
      out.middleCols(offset, p.cols()) = p.value();
      offset += p.cols();
    }
  }
  std::vector<Var<Scalar>> inputs(parts.begin(), parts.end());
  return parts.front().tape().record(
      std::move(out), std::span<const Var<Scalar>>(inputs), [inputs, axis](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        Index off = 0;
        for (const auto& p : inputs) {
          if (axis == 0) {
            if (p.requires_grad()) t.accumulate(p, g.middleRows(off, p.rows()));
            off += p.rows();
          } else {
            if (p.requires_grad()) t.accumulate(p, g.middleCols(off, p.cols()));
            off += p.cols();
          }
        }
      });
}

template <typename Scalar>
Var<Scalar> concat(std::initializer_list<Var<Scalar>> parts, int axis) {
  return concat(std::span<const Var<Scalar>>(parts.begin(), parts.size()), axis);
}

/// out.row(i) = a.row(index[i]).
template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& a, std::vector<Index> index) {
  Matrix<Scalar> out(static_cast<Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= a.rows())
      throw Error(ErrorCode::IndexOutOfRange, "gather_rows: row " + std::to_string(index[i]) + " of " +
                                                  std::to_string(a.rows()));
    out.row(static_cast<Index>(i)) = a.value().row(index[i]);
  }
  return a.tape().record(std::move(out), {a}, [a, index = std::move(index)](Tape<Scalar>& t, const Matrix<Scalar>& g) {
    Matrix<Scalar> ga = Matrix<Scalar>::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < index.size(); ++i) ga.row(index[i]) += g.row(static_cast<Index>(i));
    t.accumulate(a, ga);
  });
}

/// out.row(j) = sum of messages.row(e) with targets[e] == j; rows without
/// incoming messages are zero.
template <typename Scalar>
Var<Scalar> scatter_sum(const Var<Scalar>& messages, std::vector<Index> targets, Index n) {
  if (static_cast<Index>(targets.size()) != messages.rows())
    throw Error(ErrorCode::ShapeMismatch, "scatter_sum: " + std::to_string(targets.size()) + " targets for " +
                                              std::to_string(messages.rows()) + " messages");
  Matrix<Scalar> out = Matrix<Scalar>::Zero(n, messages.cols());
  for (std::size_t e = 0; e < targets.size(); ++e) {
    if (targets[e] < 0 || targets[e] >= n)
      throw Error(ErrorCode::IndexOutOfRange, "scatter_sum: target " + std::to_string(targets[e]) + " >= " +
                                                  std::to_string(n));
    out.row(targets[e]) += messages.value().row(static_cast<Index>(e));
  }
  return messages.tape().record(
      std::move(out), {messages}, [messages, targets = std::move(targets)](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        Matrix<Scalar> gm(messages.rows(), messages.cols());
        for (std::size_t e = 0; e < targets.size(); ++e) gm.row(static_cast<Index>(e)) = g.row(targets[e]);
        t.accumulate(messages, gm);
      });
}

/// Valid causal convolution along time.
///
/// x is (T*stride) x C_in: `stride` independent series (nodes, batch items)
/// interleaved per time step. w is the [K x C_in x C_out] kernel flattened to
/// (K*C_in) x C_out, b is 1 x C_out. Output step t reads input steps
/// t..t+K-1 and has (T-K+1)*stride rows.
template <typename Scalar>
Var<Scalar> conv1d_causal(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& b, Index kernel,
                          Index stride = 1) {
  if (kernel < 1 || stride < 1 || x.rows() % stride != 0)
    throw Error(ErrorCode::ShapeMismatch, "conv1d_causal: bad kernel/stride for " + detail::shape(x.rows(), x.cols()));
  const Index steps = x.rows() / stride;
  if (steps < kernel)
    throw Error(ErrorCode::WindowTooShort, "conv1d_causal: " + std::to_string(steps) + " steps < kernel " +
                                               std::to_string(kernel));
  const Index cin = x.cols();
  if (w.rows() != kernel * cin || b.rows() != 1 || b.cols() != w.cols())
    throw Error(ErrorCode::ShapeMismatch, "conv1d_causal: weight " + detail::shape(w.rows(), w.cols()) + ", bias " +
                                              detail::shape(b.rows(), b.cols()) + " for kernel " +
                                              std::to_string(kernel) + " and " + std::to_string(cin) + " channels");
  const Index out_rows = (steps - kernel + 1) * stride;
  Matrix<Scalar> out(out_rows, w.cols());
  out.rowwise() = b.value().row(0);
  for (Index k = 0; k < kernel; ++k)
    out.noalias() += x.value().middleRows(k * stride, out_rows) * w.value().middleRows(k * cin, cin);
  return x.tape().record(std::move(out), {x, w, b},
                         [x, w, b, kernel, stride, cin, out_rows](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                           if (x.requires_grad()) {
                             Matrix<Scalar> gx = Matrix<Scalar>::Zero(x.rows(), x.cols());
                             for (Index k = 0; k < kernel; ++k)
                               gx.middleRows(k * stride, out_rows).noalias() +=
                                   g * w.value().middleRows(k * cin, cin).transpose();
                             t.accumulate(x, gx);
                           }
                           if (w.requires_grad()) {
                             Matrix<Scalar> gw(w.rows(), w.cols());
                             for (Index k = 0; k < kernel; ++k)
                               gw.middleRows(k * cin, cin).noalias() =
                                   x.value().middleRows(k * stride, out_rows).transpose() * g;
                             t.accumulate(w, gw);
                           }
                           if (b.requires_grad()) t.accumulate(b, g.colwise().sum());
                         });
}

}  // namespace hydronet::ad
