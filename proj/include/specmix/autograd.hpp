#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// Every primitive records a backward rule. Rules are written in terms of the
// same Var primitives, so a gradient computed with create_graph = true is itself
// a differentiable graph (needed by the gradient penalty). A primitive whose
// rule works on raw tensors is flagged first-order only and refuses to take
// part in such a graph.

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "specmix/tensor.hpp"

namespace specmix::ag {

template <typename T>
class Var;

template <typename T>
struct BackwardCtx {
  const Var<T>& out;
  const std::vector<Var<T>>& inputs;
  const Var<T>& grad;
  const std::vector<bool>& needs;
};

template <typename T>
using BackwardFn = std::function<std::vector<Var<T>>(const BackwardCtx<T>&)>;

template <typename T>
struct Node {
  Tensor<T> value;
  std::vector<Var<T>> inputs;
  BackwardFn<T> backward;
  const char* op = "leaf";
  bool requires_grad = false;
  bool second_order = true;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->op = "constant";
    return Var(std::move(n));
  }
  static Var leaf(Tensor<T> value, bool requires_grad = true) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  /// In-place access for optimizers; only meaningful on leaves.
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const char* op() const { return node_->op; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }
  T item() const { return node_->value.item(); }

  /// Same value, cut from the graph.
  Var detach() const { return constant(node_->value); }

 private:
  std::shared_ptr<Node<T>> node_;
};

bool grad_enabled();

/// Disables graph recording for the enclosing scope.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Records a new node; inputs and the rule are dropped when no input needs a gradient.
template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs, const char* op, BackwardFn<T> backward,
               bool second_order = true);

/// d(output)/d(wrt[i]). `output` must hold exactly one value. With create_graph
/// the returned gradients are differentiable graph nodes. Inputs that do not
/// influence the output get zero gradients.
template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& wrt, bool create_graph = false);

// ---------------------------------------------------------------------------
// Primitives. Binary elementwise ops broadcast numpy-style.

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> div(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> neg(const Var<T>& a);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> add_scalar(const Var<T>& a, T c);
template <typename T> Var<T> pow_scalar(const Var<T>& a, T p);
template <typename T> Var<T> exp(const Var<T>& a);
template <typename T> Var<T> log(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);
template <typename T> Var<T> softplus(const Var<T>& a);
/// Gradient is passed only where lo <= x <= hi.
template <typename T> Var<T> clamp(const Var<T>& a, T lo, T hi);
/// arccos with the argument clamped to [-1 + 1e-7, 1 - 1e-7].
template <typename T> Var<T> arccos(const Var<T>& a);
/// Learnable per-channel slope on the last axis.
template <typename T> Var<T> prelu(const Var<T>& x, const Var<T>& slope);
template <typename T> Var<T> leaky_relu(const Var<T>& x, T slope);

/// Sum-reduce to `shape` (right-aligned; reduced extents are 1 or missing).
template <typename T> Var<T> sum_to(const Var<T>& a, const Shape& shape);
template <typename T> Var<T> broadcast_to(const Var<T>& a, const Shape& shape);
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
template <typename T> Var<T> reshape(const Var<T>& a, const Shape& shape);
template <typename T> Var<T> transpose(const Var<T>& a);
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> softmax_last(const Var<T>& a);
template <typename T> Var<T> log_softmax_last(const Var<T>& a);

enum class Padding { same, valid };

/// Channels-last 1D convolution without bias: x[B,L,Cin] * w[K,Cin,Cout] -> [B,Lout,Cout].
/// Each output accumulates kernel-position-major, then input channel.
template <typename T> Var<T> conv1d(const Var<T>& x, const Var<T>& w, std::size_t stride,
                                    Padding padding = Padding::same);
/// Adjoint of conv1d with respect to its input.
template <typename T> Var<T> conv1d_input_grad(const Var<T>& gy, const Var<T>& w, std::size_t in_len,
                                               std::size_t stride, std::size_t pad_left);
/// Adjoint of conv1d with respect to its kernel.
template <typename T> Var<T> conv1d_weight_grad(const Var<T>& x, const Var<T>& gy, std::size_t kernel,
                                                std::size_t stride, std::size_t pad_left);

/// Average pooling over axis 1 of [B,L,C] with kernel = stride = k.
template <typename T> Var<T> avgpool1d(const Var<T>& x, std::size_t k);
template <typename T> Var<T> avgpool1d_grad(const Var<T>& gy, std::size_t k, std::size_t in_len);

template <typename T> Var<T> concat_last(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_last(const Var<T>& a, std::size_t offset, std::size_t width);
/// Zero-pads the last axis to `total`, placing `a` at `offset`.
template <typename T> Var<T> pad_last(const Var<T>& a, std::size_t offset, std::size_t total);

/// Per-channel normalisation over every axis but the last, using the batch's
/// statistics. First-order only: its backward rule is evaluated on raw tensors.
template <typename T>
struct BatchNormResult {
  Var<T> out;
  Tensor<T> mean;
  Tensor<T> var;
};
template <typename T>
BatchNormResult<T> batch_norm_train(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps);

// Composites built from the primitives above.
template <typename T> Var<T> dot(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> l2_norm(const Var<T>& a);

template <typename T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <typename T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }
template <typename T> Var<T> operator/(const Var<T>& a, const Var<T>& b) { return div(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a) { return neg(a); }
template <typename T> Var<T> operator*(const Var<T>& a, T s) { return scale(a, s); }
template <typename T> Var<T> operator*(T s, const Var<T>& a) { return scale(a, s); }
template <typename T> Var<T> operator+(const Var<T>& a, T c) { return add_scalar(a, c); }
template <typename T> Var<T> operator+(T c, const Var<T>& a) { return add_scalar(a, c); }
template <typename T> Var<T> operator-(T c, const Var<T>& a) { return add_scalar(neg(a), c); }

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op);

}  // namespace specmix::ag
