#pragma once

#include <cstddef>
#include <optional>

#include "biasloss/graph.hpp"

namespace biasloss {

enum class Mode { Train, Eval };

/// Running statistics owned by a model; batchnorm ops update them in place
/// during train-mode forward passes.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean({channels}, T{0}), running_var({channels}, T{1}) {}
};

struct ConvParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

}  // namespace biasloss

namespace biasloss::ops {

/// Cross-correlation of x[b,cin,h,w] with weight[cout,cin/groups,kh,kw].
template <typename T>
NodeId conv2d(Graph<T>& g, NodeId x, NodeId weight, std::optional<NodeId> bias, ConvParams params);

/// Per-channel batch normalization over (b,h,w). Train mode uses biased batch
/// statistics and folds the unbiased variance into the running estimate.
template <typename T>
NodeId batchnorm(Graph<T>& g, NodeId x, NodeId gamma, NodeId beta, BatchNormState<T>& state, Mode mode);

/// Cell (i,j) averages rows [floor(i*h/oh), ceil((i+1)*h/oh)) and the
/// analogous columns.
template <typename T>
NodeId adaptive_avg_pool(Graph<T>& g, NodeId x, std::size_t out_h, std::size_t out_w);

/// x[n,in] * weight[out,in]^T + bias[out]
template <typename T>
NodeId linear(Graph<T>& g, NodeId x, NodeId weight, std::optional<NodeId> bias);

}  // namespace biasloss::ops
