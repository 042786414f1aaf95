#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "a3net/error.hpp"
#include "a3net/tensor.hpp"

namespace a3net {

using NodeId = std::size_t;

enum class OpKind {
  Leaf,
  Constant,
  StopGrad,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  Sigmoid,
  Tanh,
  Exp,
  Log,
  Linear,
  MatmulBT,
  Matmul,
  Concat,
  Slice,
  Reshape,
  BroadcastTo,
  MaskedSoftmax,
  MaskedMax,
  Sum,
  Mean,
  Embedding,
  Pick,
  SruRecurrence,
};

inline const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::StopGrad: return "stop_gradient";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Linear: return "linear";
    case OpKind::MatmulBT: return "matmul_bt";
    case OpKind::Matmul: return "matmul";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Reshape: return "reshape";
    case OpKind::BroadcastTo: return "broadcast_to";
    case OpKind::MaskedSoftmax: return "masked_softmax";
    case OpKind::MaskedMax: return "masked_max";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Embedding: return "embedding";
    case OpKind::Pick: return "pick";
    case OpKind::SruRecurrence: return "sru_recurrence";
  }
  return "unknown";
}

class Graph;

// Handle to a node of a Graph. Cheap to copy; only valid while its graph lives.
struct Var {
  Graph* graph = nullptr;
  NodeId id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Result of a backward pass: d loss / d node for every node of the graph.
// Nodes the loss does not depend on report zeros of their own shape.
class Gradients {
 public:
  Gradients() = default;
  Gradients(std::vector<std::optional<Tensor>> grads, std::vector<Shape> shapes)
      : grads_(std::move(grads)), shapes_(std::move(shapes)) {}

  Tensor at(NodeId id) const {
    if (id >= grads_.size()) throw Error("gradients: node id " + std::to_string(id) + " out of range");
    if (grads_[id]) return *grads_[id];
    return Tensor(shapes_[id]);
  }

  Tensor wrt(Var v) const { return at(v.id); }

  bool reached(NodeId id) const { return id < grads_.size() && grads_[id].has_value(); }

  std::size_t size() const { return grads_.size(); }

 private:
  std::vector<std::optional<Tensor>> grads_;
  std::vector<Shape> shapes_;
};

// Append-only tape of primitive applications, rebuilt for every forward pass.
// Inputs of a node always precede it, so node order is a topological order.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& grad_out)>;

  struct Options {
    // Raise NumericError as soon as any primitive produces NaN or Inf.
    bool check_finite = false;
  };

  Graph() = default;
  explicit Graph(Options options) : options_(options) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  Var leaf(Tensor value) { return push(OpKind::Leaf, {}, std::move(value), nullptr, true); }

  Var constant(Tensor value) { return push(OpKind::Constant, {}, std::move(value), nullptr, false); }

  // Used by primitives. The node requires a gradient when any input does.
  Var record(OpKind kind, std::vector<NodeId> inputs, Tensor value, BackwardFn backward) {
    bool needs = false;
    for (NodeId in : inputs) needs = needs || nodes_.at(in).requires_grad;
    return push(kind, std::move(inputs), std::move(value), needs ? std::move(backward) : nullptr, needs);
  }

  // A node whose value is copied from its input but which never passes a
  // gradient back to it.
  Var stop_gradient(Var v) {
    check_owner(v);
    return push(OpKind::StopGrad, {v.id}, nodes_[v.id].value, nullptr, false);
  }

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  const Options& options() const { return options_; }

  void bind(const std::string& name, Var v) {
    check_owner(v);
    bindings_[name] = v.id;
  }

  std::optional<Var> find(const std::string& name) {
    auto it = bindings_.find(name);
    if (it == bindings_.end()) return std::nullopt;
    return Var{this, it->second};
  }

  Var bound(const std::string& name) {
    auto v = find(name);
    if (!v) throw Error("graph: no variable bound as '" + name + "'; available: " + binding_list());
    return *v;
  }

  std::vector<std::string> binding_names() const {
    std::vector<std::string> names;
    for (const auto& [name, id] : bindings_) names.push_back(name);
    return names;
  }

  // Reverse sweep over the tape. Contributions of multiple uses add up.
  Gradients backward(Var loss) {
    check_owner(loss);
    if (!nodes_[loss.id].value.is_scalar()) {
      throw ShapeError("backward: loss must be a scalar, got shape " +
                       shape_str(nodes_[loss.id].value.shape()));
    }
    grads_.assign(nodes_.size(), std::nullopt);
    grads_[loss.id] = Tensor::scalar(1.0);
    for (NodeId i = loss.id + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!grads_[i] || !node.backward) continue;
      node.backward(*this, *grads_[i]);
    }
    std::vector<Shape> shapes;
    shapes.reserve(nodes_.size());
    for (const Node& node : nodes_) shapes.push_back(node.value.shape());
    Gradients result(std::move(grads_), std::move(shapes));
    grads_.clear();
    return result;
  }

  // Gradient of `loss` with respect to the variable bound under `name`.
  Tensor grad_wrt(Var loss, const std::string& name) {
    auto target = find(name);
    if (!target) {
      throw Error("grad_wrt: no variable bound as '" + name + "'; available: " + binding_list());
    }
    return backward(loss).wrt(*target);
  }

  // Gradient slot for `id` during a backward sweep; nullptr when the node
  // does not require a gradient. Zero-initialised on first use.
  Tensor* grad_slot(NodeId id) {
    if (!nodes_[id].requires_grad) return nullptr;
    auto& slot = grads_[id];
    if (!slot) slot.emplace(nodes_[id].value.shape());
    return &*slot;
  }

  void check_owner(Var v) const {
    if (v.graph != this || v.id >= nodes_.size()) throw Error("graph: variable belongs to another graph");
  }

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    Tensor value;
    BackwardFn backward;
    bool requires_grad;
  };

  Var push(OpKind kind, std::vector<NodeId> inputs, Tensor value, BackwardFn backward, bool requires_grad) {
    if (options_.check_finite && !value.all_finite()) {
      throw NumericError(std::string("non-finite value produced by ") + op_name(kind));
    }
    nodes_.push_back(Node{kind, std::move(inputs), std::move(value), std::move(backward), requires_grad});
    return Var{this, nodes_.size() - 1};
  }

  std::string binding_list() const {
    std::string out;
    for (const auto& [name, id] : bindings_) {
      if (!out.empty()) out += ", ";
      out += name;
    }
    return out.empty() ? "(none)" : out;
  }

  Options options_;
  std::deque<Node> nodes_;  // stable references while the tape grows
  std::map<std::string, NodeId> bindings_;
  std::vector<std::optional<Tensor>> grads_;
};

inline const Tensor& Var::value() const { return graph->value(id); }

}  // namespace a3net
