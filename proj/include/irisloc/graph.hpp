#ifndef IRISLOC_GRAPH_HPP
#define IRISLOC_GRAPH_HPP

// Reverse-mode automatic differentiation on an append-only tape.
//
// A Graph owns every intermediate value of one forward pass. Nodes are only
// ever appended, and an operation can only reference nodes that already
// exist, so node order is a topological order and backward() is a single
// reverse sweep.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "irisloc/errors.hpp"
#include "irisloc/tensor.hpp"

namespace irisloc {

template <typename T>
class Graph;

/// Handle to a node of a Graph.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(id); }
  const Shape& shape() const { return graph->value(id).shape(); }
};

template <typename T>
class Graph {
 public:
  /// Called once per node during backward with the node's own id; pushes the
  /// node's output gradient into the gradients of its inputs.
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  explicit Graph(bool track_gradients = true) : tracking_(track_gradients) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool tracking() const noexcept { return tracking_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Leaf that never receives a gradient.
  Var<T> constant(Tensor<T> value, std::string_view kind = "constant") {
    Node node;
    node.kind = std::string(kind);
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  /// Leaf bound to an external tensor; backward() accumulates into its grad.
  /// The bound tensor must outlive the backward pass.
  Var<T> parameter(Tensor<T>& bound, std::string_view kind = "parameter") {
    Node node;
    node.kind = std::string(kind);
    node.value = Tensor<T>(bound.shape(), Buffer<T>(bound.data().begin(), bound.data().end()));
    node.requires_grad = tracking_;
    node.bound = &bound;
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  /// Append an operation node. `inputs` must name existing nodes.
  Var<T> record(std::string_view kind, std::vector<std::size_t> inputs, Tensor<T> value,
                BackwardFn backward) {
    Node node;
    node.kind = std::string(kind);
    node.value = std::move(value);
    for (auto in : inputs) {
      if (in >= nodes_.size()) throw Error("graph: input node " + std::to_string(in) + " does not exist");
      node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
    }
    node.inputs = std::move(inputs);
    if (tracking_ && node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  std::string_view kind(std::size_t id) const { return nodes_.at(id).kind; }
  std::span<const std::size_t> inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient buffer of a node, allocated as zeros on first access.
  std::span<T> grad(std::size_t id) {
    auto& node = nodes_.at(id);
    if (node.grad.size() != node.value.size()) node.grad.assign(node.value.size(), T{0});
    return node.grad;
  }

  /// Gradient buffer of an input when it needs one, otherwise an empty span.
  std::span<T> grad_if_required(std::size_t id) {
    return nodes_.at(id).requires_grad ? grad(id) : std::span<T>{};
  }

  void backward(Var<T> loss) {
    if (loss.graph != this) throw Error("backward: loss belongs to a different graph");
    const auto& out = nodes_.at(loss.id);
    if (out.value.size() != 1) {
      throw ShapeError("backward: loss must be a scalar, got shape " + describe(out.value.shape()));
    }
    if (!tracking_) throw Error("backward: graph was built without gradient tracking");
    grad(loss.id)[0] = T{1};
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      auto& node = nodes_[id];
      if (!node.requires_grad || node.grad.empty()) continue;
      if (node.backward) node.backward(*this, id);
      if (node.bound) {
        auto& target = *node.bound;
        if (target.grad().size() != target.size()) target.zero_grad();
        auto dst = target.grad();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += node.grad[i];
      }
    }
  }

 private:
  struct Node {
    std::string kind;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    Buffer<T> grad;
    bool requires_grad = false;
    Tensor<T>* bound = nullptr;
    BackwardFn backward;
  };

  bool tracking_;
  std::vector<Node> nodes_;
};

}  // namespace irisloc

#endif  // IRISLOC_GRAPH_HPP
