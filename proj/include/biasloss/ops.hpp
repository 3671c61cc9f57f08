#pragma once

#include <cstddef>
#include <optional>

#include "biasloss/graph.hpp"

// Graph-building primitives. Each function appends one or more nodes and
// returns the id of the result. Binary element-wise ops broadcast numpy-style;
// shapes are resolved when the graph runs.
namespace biasloss::ops {

template <typename T>
NodeId add(Graph<T>& g, NodeId a, NodeId b);
template <typename T>
NodeId sub(Graph<T>& g, NodeId a, NodeId b);
template <typename T>
NodeId mul(Graph<T>& g, NodeId a, NodeId b);
template <typename T>
NodeId div(Graph<T>& g, NodeId a, NodeId b);

template <typename T>
NodeId scale(Graph<T>& g, NodeId x, T factor);
template <typename T>
NodeId add_scalar(Graph<T>& g, NodeId x, T offset);

template <typename T>
NodeId exp(Graph<T>& g, NodeId x);
template <typename T>
NodeId log(Graph<T>& g, NodeId x);
template <typename T>
NodeId relu(Graph<T>& g, NodeId x);
/// x * clamp(x + 3, 0, 6) / 6
template <typename T>
NodeId hard_swish(Graph<T>& g, NodeId x);
/// clamp(x + 3, 0, 6) / 6
template <typename T>
NodeId hard_sigmoid(Graph<T>& g, NodeId x);
/// Gradient passes only where lo < x < hi.
template <typename T>
NodeId clamp(Graph<T>& g, NodeId x, T lo, T hi);

template <typename T>
NodeId matmul(Graph<T>& g, NodeId a, NodeId b);
template <typename T>
NodeId transpose(Graph<T>& g, NodeId x);
template <typename T>
NodeId reshape(Graph<T>& g, NodeId x, Shape shape);
/// [N, ...] -> [N, prod(...)], with N taken from the runtime value.
template <typename T>
NodeId flatten(Graph<T>& g, NodeId x);
template <typename T>
NodeId broadcast_to(Graph<T>& g, NodeId x, Shape shape);
/// Same value, no gradient flows to x.
template <typename T>
NodeId detach(Graph<T>& g, NodeId x);

/// Full reductions produce a rank-0 tensor; axis reductions drop the axis
/// unless keepdim is set. max/min route the gradient to the first extremum.
template <typename T>
NodeId sum(Graph<T>& g, NodeId x, std::optional<std::size_t> axis = std::nullopt, bool keepdim = false);
template <typename T>
NodeId mean(Graph<T>& g, NodeId x, std::optional<std::size_t> axis = std::nullopt, bool keepdim = false);
template <typename T>
NodeId max(Graph<T>& g, NodeId x, std::optional<std::size_t> axis = std::nullopt, bool keepdim = false);
template <typename T>
NodeId min(Graph<T>& g, NodeId x, std::optional<std::size_t> axis = std::nullopt, bool keepdim = false);

/// Broadcast result shape under numpy rules; throws ShapeError if incompatible.
Shape broadcast_shape(const Shape& a, const Shape& b);

}  // namespace biasloss::ops
