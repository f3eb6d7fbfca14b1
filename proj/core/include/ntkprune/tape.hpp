#pragma once

#include <cstddef>
#include <vector>

#include "ntkprune/tensor.hpp"

namespace ntkprune {

using NodeId = std::size_t;

// Reverse-mode autodiff over an append-only tape. A tape lives for one
// forward pass and however many backward passes are run over it; there is no
// taping of the backward pass itself (no higher-order derivatives).
//
// Conventions:
//  * leaf() marks a differentiable input, constant() a fixed one.
//  * backward(id) requires a scalar node and seeds its adjoint with 1.
//  * backward(id, seed) seeds an arbitrary node with a same-shaped adjoint;
//    this is what Jacobian extraction uses, one seed per output entry.
//  * every backward pass starts from cleared adjoints, walks nodes in
//    reverse creation order, and is fully deterministic.
//  * any operation that produces a NaN or infinity throws NumericError.
class Tape {
 public:
  NodeId constant(Tensor v);
  NodeId leaf(Tensor v);

  // y[i,j] = sum_k a[i,k] * b[k,j]
  NodeId matmul(NodeId a, NodeId b);
  // y[n,o] = sum_i x[n,i] * w[o,i] + b[o]; the dense-layer form.
  NodeId linear(NodeId x, NodeId w, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId relu(NodeId a);
  // d|x|/dx at 0 is taken as 0.
  NodeId abs(NodeId a);
  NodeId scale(NodeId a, double c);
  NodeId sum(NodeId a);
  NodeId sq_l2_norm(NodeId a);
  // x: (n, ci, h, w), w: (co, ci, kh, kw); stride 1, zero padding `pad`.
  NodeId conv2d(NodeId x, NodeId w, std::size_t pad);
  // x: (n, c, h, w), b: (c); adds b[c] to every spatial position.
  NodeId channel_bias(NodeId x, NodeId b);
  NodeId reshape(NodeId a, Shape shape);
  // Mean over rows of log-sum-exp(z) - z[label]; numerically stable.
  NodeId softmax_cross_entropy(NodeId logits, std::vector<int> labels);
  // Mean over rows of 0.5 * ||z - onehot(label)||^2.
  NodeId squared_error(NodeId logits, std::vector<int> labels);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  const Tensor& grad(NodeId id) const;

  void backward(NodeId output);
  void backward(NodeId output, const Tensor& seed);
  void zero_grads();

  std::size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op {
    constant,
    leaf,
    matmul,
    linear,
    add,
    sub,
    mul,
    relu,
    abs,
    scale,
    sum,
    sq_l2_norm,
    conv2d,
    channel_bias,
    reshape,
    softmax_ce,
    squared_err,
  };

  struct Node {
    Op op;
    Tensor value;
    Tensor grad;  // sized lazily at first backward
    NodeId in[3] = {0, 0, 0};
    int n_in = 0;
    bool requires_grad = false;
    bool grad_live = false;  // adjoint touched during the current backward
    double factor = 0.0;     // scale
    std::size_t pad = 0;     // conv2d
    std::vector<int> labels;
    Tensor aux;  // softmax cache
  };

  NodeId push(Node n);
  void run_backward(NodeId output, const Tensor& seed);
  void accumulate(Node& node);
  Tensor& adjoint(NodeId id);

  std::vector<Node> nodes_;
};

}  // namespace ntkprune
