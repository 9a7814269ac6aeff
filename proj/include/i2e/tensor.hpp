#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace i2e::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// One value in the reverse-mode tape. `backward` reads this node's grad and
/// accumulates into the parents' grads.
template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

/// Shared handle to a tape node. Copies alias the same storage.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<T> values);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor leaf(Shape shape, std::vector<T> values, bool requires_grad);

  /// Result of a custom differentiable op.
  static Tensor from_op(Shape shape, std::vector<T> values, std::vector<Tensor> parents,
                        std::function<void(Node<T>&)> backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const T> values() const { return node_->value; }
  std::span<T> mutable_values() { return node_->value; }
  /// Empty until a backward pass reached this node.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }
  T item() const;

  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}
  std::shared_ptr<Node<T>> node_;
};

/// Seeds d(loss)/d(loss) = 1 and propagates through every upstream node that requires grad.
template <class T>
void backward(const Tensor<T>& loss);

// Ops. Shapes are row-major; "trailing" means the last dimension.

/// x[..., d_in] * W[d_in, d_out] + b[d_out].
template <class T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

/// a + b where b's shape equals a trailing suffix of a's shape.
template <class T>
Tensor<T> add_broadcast(const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> relu(const Tensor<T>& x);
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <class T>
Tensor<T> tanh(const Tensor<T>& x);

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Normalizes each trailing vector to zero mean / unit variance, then gain * x + bias.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5));

/// Scaled dot-product attention over q, k, v of shape [batch, seq, d_model]
/// split into `heads` heads. No mask. When `weights` is given it receives the
/// attention probabilities laid out [batch, head, query, key].
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                    std::vector<T>* weights = nullptr);

/// LSTM over x[batch, seq, d_in] with gate order (input, forget, cell, output),
/// wx[d_in, 4h], wh[h, 4h], b[4h]; zero initial state; returns [batch, seq, h].
template <class T>
Tensor<T> lstm(const Tensor<T>& x, const Tensor<T>& wx, const Tensor<T>& wh, const Tensor<T>& b);

/// sum(x * r) for a constant r of the same size.
template <class T>
Tensor<T> dot_constant(const Tensor<T>& x, std::span<const T> r);

/// mean_i w_i * BCE(sigmoid(z_i), y_i), computed from logits.
template <class T>
Tensor<T> weighted_bce_with_logits(const Tensor<T>& logits, std::span<const T> targets,
                                   std::span<const T> weights);

/// mean_i (p_i - y_i)^2.
template <class T>
Tensor<T> mse(const Tensor<T>& pred, std::span<const T> targets);

/// Numerically stable logistic function.
template <class T>
T stable_sigmoid(T z);

}  // namespace i2e::nn
