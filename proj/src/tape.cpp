#include "cwm/tape.hpp"

#include <string>

#include "cwm/error.hpp"

namespace cwm::ad {

std::string_view to_string(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Relu: return "relu";
    case OpKind::LeakyRelu: return "leaky_relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Linear: return "linear";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::LayerNorm: return "layer_norm";
    case OpKind::Concat: return "concat";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::RowSum: return "row_sum";
    case OpKind::SquaredDistance: return "squared_distance";
    case OpKind::Reshape: return "reshape";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::SegmentSum: return "segment_sum";
    case OpKind::GruCell: return "gru_cell";
    case OpKind::SoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw Error(ErrorKind::NumericsError, "non-finite constant");
  nodes_.push_back(Node{OpKind::Leaf, std::move(value), {}, false, false, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(Tensor value) {
  if (!value.all_finite()) throw Error(ErrorKind::NumericsError, "non-finite parameter");
  nodes_.push_back(Node{OpKind::Leaf, std::move(value), {}, true, false, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(OpKind op, Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(OpKind op, Tensor value, std::span<const Var> inputs, Backward backward) {
  if (!value.all_finite())
    throw Error(ErrorKind::NumericsError, "non-finite output from op " + std::string(to_string(op)));
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape != this) throw Error(ErrorKind::GraphError, "op input recorded on a different tape");
    needs = needs || nodes_[in.id].requires_grad;
  }
  nodes_.push_back(Node{op, std::move(value), {}, needs, false, needs ? std::move(backward) : Backward{}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  return n.has_grad ? n.grad : Tensor(n.value.shape(), 0.0);
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw Error(ErrorKind::GraphError, "loss belongs to another tape");
  if (nodes_[loss.id].value.size() != 1) throw Error(ErrorKind::GraphError, "backward() needs a scalar loss");
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  grad_buffer(loss.id)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.backward) continue;
    // A node's closure only writes to its inputs, never to itself.
    Tensor g = std::move(n.grad);
    n.backward(g);
    n.grad = std::move(g);
  }
}

Evaluation evaluate_with_gradients(const GraphFn& graph, std::span<const Tensor> params,
                                   std::span<const Tensor> inputs) {
  Tape tape;
  std::vector<Var> p, in;
  p.reserve(params.size());
  in.reserve(inputs.size());
  for (const Tensor& t : params) p.push_back(tape.parameter(t));
  for (const Tensor& t : inputs) in.push_back(tape.constant(t));
  const Var loss = graph(tape, p, in);
  tape.backward(loss);
  Evaluation out;
  out.loss = tape.value(loss).item();
  out.grads.reserve(p.size());
  for (const Var& v : p) out.grads.push_back(tape.grad(v));
  return out;
}

}  // namespace cwm::ad
