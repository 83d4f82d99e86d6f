#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "vfr/numcore/tensor.hpp"

namespace vfr {

class Graph;
class Gradients;
class Var;
Gradients backward(Graph& graph, Var loss);

// Handle to a node of a Graph. Cheap to copy; valid as long as its graph.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::uint32_t id) : graph_(graph), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
  Graph& graph() const { return *graph_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::uint32_t id_ = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order; backward walks them in exact reverse, so gradients are
// bit-reproducible. An op whose inputs are all constants records only its
// value (no backward closure).
class Graph {
 public:
  // Receives the output gradient and one slot per input; a slot is null
  // when that input does not need a gradient.
  using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var parameter(Tensor value);
  Var constant(Tensor value);

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  bool is_parameter(std::uint32_t id) const { return nodes_[id].parameter; }

 private:
  friend class Gradients;
  friend Gradients backward(Graph& graph, Var loss);

  struct Node {
    Tensor value;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool parameter = false;
  };
  std::deque<Node> nodes_;
};

// Gradient of a scalar loss with respect to every parameter leaf of a graph.
class Gradients {
 public:
  // Zero tensor for parameters the loss does not depend on.
  const Tensor& operator[](Var parameter) const;
  Tensor take(Var parameter);

 private:
  friend Gradients backward(Graph& graph, Var loss);
  std::unordered_map<std::uint32_t, Tensor> grads_;
  mutable std::unordered_map<std::uint32_t, Tensor> zeros_;
  const Graph* graph_ = nullptr;
};

Gradients backward(Graph& graph, Var loss);

// ---- differentiable operations ------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var neg(Var a);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);

// [m x k] . [k x n]
Var matmul(Var a, Var b);
Var transpose(Var a);
// [m x n] + bias[n] on every row.
Var add_bias(Var a, Var bias);
Var reshape(Var a, Shape shape);

Var sigmoid(Var a);
Var relu(Var a);
Var leaky_relu(Var a, double slope);
Var square(Var a);

Var sum(Var a);
Var mean(Var a);

// -sum r*log(p) + (1-r)*log(1-p); p clamped into [1e-12, 1-1e-12].
Var bce_loss(Var probs, const Tensor& labels);
// mean((a-b)^2)
Var mse_loss(Var a, Var b);

// Concatenate along `axis` (0 or 1 for matrices, 0 for vectors).
Var concat(const std::vector<Var>& parts, std::size_t axis);
// Rows `index` of a [n x d] matrix, as [index.size() x d].
Var gather_rows(Var table, const std::vector<std::size_t>& index);
// [n x d] matrix whose every row is the vector v[d].
Var broadcast_rows(Var v, std::size_t n);
// Column sums of a [n x d] matrix, as a vector [d].
Var sum_rows(Var m);
// Rows `index` of a vector.
Var gather(Var v, const std::vector<std::size_t>& index);

// x [C,H,W], weight [O,C,k,k], zero padding `pad`.
Var conv2d(Var x, Var weight, std::size_t stride, std::size_t pad);
// x [C,H,W] + bias[C] broadcast over space.
Var add_channel_bias(Var x, Var bias);
// Average-pool [C,H,W] to [C,out_h,out_w]; H, W must divide evenly.
Var avg_pool(Var x, std::size_t out_h, std::size_t out_w);

// ---- plain value kernels shared by ops and callers ----------------------

double sigmoid_value(double x);

}  // namespace vfr
