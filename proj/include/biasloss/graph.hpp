#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "biasloss/errors.hpp"
#include "biasloss/tensor.hpp"

namespace biasloss {

using NodeId = std::size_t;

/// A differentiable operation. forward() may cache whatever backward() needs;
/// the cache is only valid until the next forward() of the same node.
template <typename T>
class Op {
 public:
  virtual ~Op() = default;

  virtual std::string_view name() const = 0;

  virtual Tensor<T> forward(std::span<const Tensor<T>* const> inputs) = 0;

  /// Accumulates (+=) input gradients. Entries of grad_inputs are null for
  /// inputs that do not need a gradient.
  virtual void backward(std::span<const Tensor<T>* const> inputs, const Tensor<T>& output,
                        const Tensor<T>& grad_output, std::span<Tensor<T>* const> grad_inputs) = 0;

  /// Non-differentiable ops (detach and friends) stop gradient flow entirely.
  virtual bool differentiable() const { return true; }
};

template <typename T>
class GradStore {
 public:
  bool contains(NodeId id) const { return grads_.count(id) != 0; }
  const Tensor<T>& at(NodeId id) const;
  std::size_t size() const { return grads_.size(); }

  void put(NodeId id, Tensor<T> grad) { grads_[id] = std::move(grad); }

 private:
  std::unordered_map<NodeId, Tensor<T>> grads_;
};

/// Reverse-mode computation graph. Nodes are declared first and evaluated by
/// forward(); values stay attached until the next forward().
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  /// Leaf without a value; forward() fails until set_value() is called.
  NodeId input(std::string name, bool requires_grad = false);
  NodeId constant(Tensor<T> value, std::string name = {});
  NodeId parameter(Tensor<T> value, std::string name);

  NodeId apply(std::unique_ptr<Op<T>> op, std::vector<NodeId> inputs, std::string name = {});

  void set_value(NodeId leaf, Tensor<T> value);

  /// Rewires one input of an op node. No cycle check happens here; forward()
  /// rejects cyclic graphs.
  void replace_input(NodeId node, std::size_t slot, NodeId new_input);

  const Tensor<T>& forward(NodeId root);
  GradStore<T> backward(NodeId root);

  const Tensor<T>& value(NodeId id) const;
  bool has_value(NodeId id) const;
  bool requires_grad(NodeId id) const;
  bool is_leaf(NodeId id) const;
  const std::string& name(NodeId id) const;
  std::string_view op_name(NodeId id) const;
  const std::vector<NodeId>& inputs(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

  template <typename OpT>
  OpT& op_as(NodeId id) {
    auto* op = dynamic_cast<OpT*>(node(id).op.get());
    if (!op) throw GraphError("node " + std::to_string(id) + " does not hold the requested op type");
    return *op;
  }

  /// When enabled, every op output is checked for NaN/Inf during forward().
  void set_validate(bool on) { validate_ = on; }

 private:
  struct Node {
    std::unique_ptr<Op<T>> op;  // null for leaves
    std::vector<NodeId> inputs;
    std::optional<Tensor<T>> value;
    bool requires_grad = false;
    std::string name;
  };

  Node& node(NodeId id);
  const Node& node(NodeId id) const;
  std::vector<NodeId> topo_order(NodeId root) const;

  std::vector<Node> nodes_;
  bool validate_ = false;
};

extern template class GradStore<float>;
extern template class GradStore<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace biasloss
