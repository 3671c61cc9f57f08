#include "biasloss/graph.hpp"

#include <algorithm>

namespace biasloss {

template <typename T>
const Tensor<T>& GradStore<T>::at(NodeId id) const {
  auto it = grads_.find(id);
  if (it == grads_.end()) throw GraphError("no gradient recorded for node " + std::to_string(id));
  return it->second;
}

template <typename T>
typename Graph<T>::Node& Graph<T>::node(NodeId id) {
  if (id >= nodes_.size()) throw GraphError("unknown node id " + std::to_string(id));
  return nodes_[id];
}

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(NodeId id) const {
  if (id >= nodes_.size()) throw GraphError("unknown node id " + std::to_string(id));
  return nodes_[id];
}

template <typename T>
NodeId Graph<T>::input(std::string name, bool requires_grad) {
  Node n;
  n.requires_grad = requires_grad;
  n.name = std::move(name);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

template <typename T>
NodeId Graph<T>::constant(Tensor<T> value, std::string name) {
  NodeId id = input(std::move(name), false);
  nodes_[id].value = std::move(value);
  return id;
}

template <typename T>
NodeId Graph<T>::parameter(Tensor<T> value, std::string name) {
  NodeId id = input(std::move(name), true);
  nodes_[id].value = std::move(value);
  return id;
}

template <typename T>
NodeId Graph<T>::apply(std::unique_ptr<Op<T>> op, std::vector<NodeId> inputs, std::string name) {
  if (!op) throw GraphError("apply() with a null op");
  bool any_grad = false;
  for (NodeId in : inputs) any_grad = any_grad || node(in).requires_grad;
  Node n;
  n.requires_grad = any_grad && op->differentiable();
  n.op = std::move(op);
  n.inputs = std::move(inputs);
  n.name = std::move(name);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

template <typename T>
void Graph<T>::set_value(NodeId leaf, Tensor<T> value) {
  Node& n = node(leaf);
  if (n.op) throw GraphError("set_value() on non-leaf node " + std::to_string(leaf));
  n.value = std::move(value);
}

template <typename T>
void Graph<T>::replace_input(NodeId id, std::size_t slot, NodeId new_input) {
  node(new_input);
  Node& n = node(id);
  if (slot >= n.inputs.size()) throw GraphError("input slot out of range");
  n.inputs[slot] = new_input;
  bool any_grad = false;
  for (NodeId in : n.inputs) any_grad = any_grad || nodes_[in].requires_grad;
  n.requires_grad = any_grad && n.op->differentiable();
}

template <typename T>
std::vector<NodeId> Graph<T>::topo_order(NodeId root) const {
  node(root);
  enum class Mark : unsigned char { None, Active, Done };
  std::vector<Mark> mark(nodes_.size(), Mark::None);
  std::vector<NodeId> order;
  // Iterative DFS; the second pair member is the next input slot to visit.
  std::vector<std::pair<NodeId, std::size_t>> stack{{root, 0}};
  mark[root] = Mark::Active;
  while (!stack.empty()) {
    auto& [id, slot] = stack.back();
    const Node& n = nodes_[id];
    if (slot < n.inputs.size()) {
      NodeId next = n.inputs[slot++];
      if (mark[next] == Mark::Active) throw GraphError("cycle detected through node " + std::to_string(next));
      if (mark[next] == Mark::None) {
        mark[next] = Mark::Active;
        stack.emplace_back(next, 0);
      }
    } else {
      mark[id] = Mark::Done;
      order.push_back(id);
      stack.pop_back();
    }
  }
  return order;
}

template <typename T>
const Tensor<T>& Graph<T>::forward(NodeId root) {
  const auto order = topo_order(root);
  std::vector<const Tensor<T>*> args;
  for (NodeId id : order) {
    Node& n = nodes_[id];
    if (!n.op) {
      if (!n.value) {
        throw UninitializedError("leaf node " + std::to_string(id) + (n.name.empty() ? "" : " '" + n.name + "'") +
                                 " has no value");
      }
      continue;
    }
    args.clear();
    for (NodeId in : n.inputs) args.push_back(&*nodes_[in].value);
    n.value = n.op->forward(args);
    if (validate_ && !n.value->all_finite()) {
      throw NumericalError("non-finite output from op '" + std::string(n.op->name()) + "' at node " +
                           std::to_string(id));
    }
  }
  return *nodes_[root].value;
}

template <typename T>
GradStore<T> Graph<T>::backward(NodeId root) {
  const Node& r = node(root);
  if (!r.value) throw ContractError("backward() before forward()");
  if (r.value->size() != 1) {
    throw ContractError("backward() needs a scalar root, got shape " + shape_str(r.value->shape()));
  }
  const auto order = topo_order(root);

  // needs[id]: a gradient must be computed for this node because some
  // requires_grad leaf sits beneath it along differentiable edges.
  std::vector<char> needs(nodes_.size(), 0);
  for (NodeId id : order) {
    const Node& n = nodes_[id];
    if (!n.op) {
      needs[id] = n.requires_grad;
    } else if (n.op->differentiable()) {
      for (NodeId in : n.inputs) needs[id] = needs[id] || needs[in];
    }
  }

  std::vector<std::optional<Tensor<T>>> grads(nodes_.size());
  auto grad_slot = [&](NodeId id) -> Tensor<T>& {
    if (!grads[id]) grads[id].emplace(nodes_[id].value->shape(), T{0});
    return *grads[id];
  };
  grad_slot(root)[0] = T{1};

  std::vector<const Tensor<T>*> args;
  std::vector<Tensor<T>*> gins;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeId id = *it;
    Node& n = nodes_[id];
    if (!n.op || !needs[id] || !grads[id]) continue;
    args.clear();
    gins.clear();
    for (NodeId in : n.inputs) {
      args.push_back(&*nodes_[in].value);
      gins.push_back(needs[in] ? &grad_slot(in) : nullptr);
    }
    n.op->backward(args, *n.value, *grads[id], gins);
  }

  GradStore<T> store;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (!n.requires_grad || !n.value) continue;
    if (grads[id]) {
      store.put(id, std::move(*grads[id]));
    } else {
      store.put(id, Tensor<T>(n.value->shape(), T{0}));
    }
  }
  return store;
}

template <typename T>
const Tensor<T>& Graph<T>::value(NodeId id) const {
  const Node& n = node(id);
  if (!n.value) throw UninitializedError("node " + std::to_string(id) + " has no value yet");
  return *n.value;
}

template <typename T>
bool Graph<T>::has_value(NodeId id) const {
  return node(id).value.has_value();
}

template <typename T>
bool Graph<T>::requires_grad(NodeId id) const {
  return node(id).requires_grad;
}

template <typename T>
bool Graph<T>::is_leaf(NodeId id) const {
  return node(id).op == nullptr;
}

template <typename T>
const std::string& Graph<T>::name(NodeId id) const {
  return node(id).name;
}

template <typename T>
std::string_view Graph<T>::op_name(NodeId id) const {
  const Node& n = node(id);
  return n.op ? n.op->name() : std::string_view("leaf");
}

template <typename T>
const std::vector<NodeId>& Graph<T>::inputs(NodeId id) const {
  return node(id).inputs;
}

template class GradStore<float>;
template class GradStore<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace biasloss
