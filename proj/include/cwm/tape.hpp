#pragma once

#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

#include "cwm/tensor.hpp"

namespace cwm::ad {

class Tape;

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  Relu,
  LeakyRelu,
  Sigmoid,
  Tanh,
  Linear,
  Conv2d,
  LayerNorm,
  Concat,
  Sum,
  Mean,
  RowSum,
  SquaredDistance,
  Reshape,
  GatherRows,
  SegmentSum,
  GruCell,
  SoftmaxCrossEntropy,
};

std::string_view to_string(OpKind op);

/// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Records a computation as it runs and replays it backwards. Node ids are a
/// topological order, so backward() is a single reverse sweep; gradients
/// accumulate additively at fan-out.
class Tape {
 public:
  using Backward = std::function<void(const Tensor& out_grad)>;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  OpKind op(Var v) const { return nodes_[v.id].op; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  /// Gradient after backward(); zeros of the value's shape if nothing flowed there.
  Tensor grad(Var v) const;
  bool reached(Var v) const { return nodes_[v.id].has_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Requires a scalar (single element) loss.
  void backward(Var loss);

  /// Low-level: appends an op node. Throws NumericsError on non-finite values.
  Var record(OpKind op, Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(OpKind op, Tensor value, std::span<const Var> inputs, Backward backward);
  /// Mutable gradient buffer of node `id`, zero-initialised on first use.
  Tensor& grad_buffer(int id);
  bool wants_grad(int id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    OpKind op = OpKind::Leaf;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

/// Result of evaluate_with_gradients: scalar loss and d(loss)/d(param) per parameter.
struct Evaluation {
  double loss = 0.0;
  std::vector<Tensor> grads;
};

using GraphFn = std::function<Var(Tape&, std::span<const Var> params, std::span<const Var> inputs)>;

/// Runs `graph` on a fresh tape with `params` as differentiable leaves and
/// `inputs` as constants, then backpropagates.
Evaluation evaluate_with_gradients(const GraphFn& graph, std::span<const Tensor> params,
                                   std::span<const Tensor> inputs);

}  // namespace cwm::ad
