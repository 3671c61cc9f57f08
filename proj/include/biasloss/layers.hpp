#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "biasloss/graph.hpp"
#include "biasloss/nn_ops.hpp"

namespace biasloss {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  bool weight_decay = true;
};

/// Owns trainable tensors and batchnorm running statistics. Layers refer to
/// entries by index, so a store can be copied together with its layers.
template <typename T>
class ParameterStore {
 public:
  std::size_t add(std::string name, Tensor<T> value, bool weight_decay = true);
  std::size_t add_batchnorm(std::string name, std::size_t channels);

  std::size_t size() const { return params_.size(); }
  Parameter<T>& param(std::size_t i) { return params_.at(i); }
  const Parameter<T>& param(std::size_t i) const { return params_.at(i); }
  std::vector<Parameter<T>>& params() { return params_; }
  const std::vector<Parameter<T>>& params() const { return params_; }
  std::optional<std::size_t> find(const std::string& name) const;

  std::size_t batchnorm_count() const { return bn_.size(); }
  BatchNormState<T>& batchnorm(std::size_t i) { return bn_.at(i); }
  const BatchNormState<T>& batchnorm(std::size_t i) const { return bn_.at(i); }
  const std::string& batchnorm_name(std::size_t i) const { return bn_names_.at(i); }

  /// Number of trainable scalars.
  std::size_t scalar_count() const;

 private:
  void claim(const std::string& name);

  std::vector<Parameter<T>> params_;
  std::deque<BatchNormState<T>> bn_;  // deque: ops hold references across push_back
  std::vector<std::string> bn_names_;
  std::vector<std::string> names_;
};

/// Materializes store entries as leaves of one graph and collects named
/// probe nodes while a model is being built.
template <typename T>
class Binding {
 public:
  Binding(Graph<T>& g, ParameterStore<T>& store, Mode mode, bool param_grads);

  NodeId param(std::size_t index);
  BatchNormState<T>& batchnorm(std::size_t index) { return store_->batchnorm(index); }
  Graph<T>& graph() { return *graph_; }
  Mode mode() const { return mode_; }

  void probe(std::string name, NodeId node) { probes_.emplace_back(std::move(name), node); }
  const std::vector<std::pair<std::string, NodeId>>& probes() const { return probes_; }
  /// Leaf id per store index, or nullopt for entries this graph never used.
  const std::vector<std::optional<NodeId>>& param_nodes() const { return nodes_; }

 private:
  Graph<T>* graph_;
  ParameterStore<T>* store_;
  Mode mode_;
  bool param_grads_;
  std::vector<std::optional<NodeId>> nodes_;
  std::vector<std::pair<std::string, NodeId>> probes_;
};

enum class Activation { None, Relu, HardSwish };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

template <typename T>
NodeId activate(Graph<T>& g, NodeId x, Activation a);

/// Uniform(-b, b) with b = sqrt(6 / fan_in), drawn from the init stream.
template <typename T>
Tensor<T> kaiming_uniform(const Shape& shape, std::size_t fan_in, std::uint64_t seed, std::uint64_t stream);

struct Conv2dSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
  bool bias = false;

  void validate() const;
  Shape weight_shape() const { return {out_channels, in_channels / groups, kernel_h, kernel_w}; }
  ConvParams params() const { return {stride, padding, groups}; }
  std::size_t fan_in() const { return in_channels / groups * kernel_h * kernel_w; }
  std::size_t parameter_count() const { return shape_numel(weight_shape()) + (bias ? out_channels : 0); }
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore<T>& store, const std::string& name, Conv2dSpec spec, std::uint64_t seed);

  NodeId operator()(Binding<T>& b, NodeId x) const;
  const Conv2dSpec& spec() const { return spec_; }
  std::size_t weight_index() const { return weight_; }
  std::optional<std::size_t> bias_index() const { return bias_; }

 private:
  Conv2dSpec spec_;
  std::size_t weight_ = 0;
  std::optional<std::size_t> bias_;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParameterStore<T>& store, const std::string& name, std::size_t channels);

  NodeId operator()(Binding<T>& b, NodeId x) const;
  std::size_t gamma_index() const { return gamma_; }
  std::size_t beta_index() const { return beta_; }
  std::size_t state_index() const { return state_; }

 private:
  std::size_t gamma_ = 0;
  std::size_t beta_ = 0;
  std::size_t state_ = 0;
};

/// conv -> batchnorm -> activation; the output is registered as a probe under
/// the layer name.
template <typename T>
class ConvBnAct {
 public:
  ConvBnAct() = default;
  ConvBnAct(ParameterStore<T>& store, std::string name, Conv2dSpec spec, Activation act, std::uint64_t seed);

  NodeId operator()(Binding<T>& b, NodeId x) const;
  const std::string& name() const { return name_; }
  const Conv2d<T>& conv() const { return conv_; }
  const BatchNorm2d<T>& bn() const { return bn_; }
  Activation activation() const { return act_; }

 private:
  std::string name_;
  Conv2d<T> conv_;
  BatchNorm2d<T> bn_;
  Activation act_ = Activation::None;
};

/// pool(1x1) -> 1x1 reduce + ReLU -> 1x1 expand -> hard-sigmoid gate.
template <typename T>
class SqueezeExcite {
 public:
  SqueezeExcite() = default;
  SqueezeExcite(ParameterStore<T>& store, const std::string& name, std::size_t channels, std::size_t reduced,
                std::uint64_t seed);

  NodeId operator()(Binding<T>& b, NodeId x) const;

 private:
  Conv2d<T> reduce_;
  Conv2d<T> expand_;
};

struct InvertedResidualSpec {
  std::size_t in_channels = 0;
  std::size_t expand_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  std::size_t kernel = 3;
  Activation activation = Activation::Relu;
  bool use_se = false;

  bool use_residual() const { return stride == 1 && in_channels == out_channels; }
  void validate() const;
};

template <typename T>
class InvertedResidual {
 public:
  InvertedResidual() = default;
  InvertedResidual(ParameterStore<T>& store, std::string name, InvertedResidualSpec spec, std::uint64_t seed);

  NodeId operator()(Binding<T>& b, NodeId x) const;
  const InvertedResidualSpec& spec() const { return spec_; }
  const ConvBnAct<T>& expand() const { return expand_; }
  const ConvBnAct<T>& depthwise() const { return depthwise_; }
  const ConvBnAct<T>& project() const { return project_; }

 private:
  std::string name_;
  InvertedResidualSpec spec_;
  ConvBnAct<T> expand_;
  ConvBnAct<T> depthwise_;
  std::optional<SqueezeExcite<T>> se_;
  ConvBnAct<T> project_;
};

struct SkipBlockSpec {
  std::size_t in_channels = 0;
  std::size_t expand_channels = 0;
  std::size_t out_channels = 0;
  std::size_t target_h = 1;
  std::size_t target_w = 1;
  std::size_t kernel = 3;

  void validate() const;
};

/// Adaptive average pool to the target size, then 1x1 expand (ReLU),
/// depthwise (ReLU) and a linear 1x1 projection.
template <typename T>
class SkipBlock {
 public:
  SkipBlock() = default;
  SkipBlock(ParameterStore<T>& store, std::string name, SkipBlockSpec spec, std::uint64_t seed);

  NodeId operator()(Binding<T>& b, NodeId x) const;
  const SkipBlockSpec& spec() const { return spec_; }
  const ConvBnAct<T>& expand() const { return expand_; }
  const ConvBnAct<T>& depthwise() const { return depthwise_; }
  const ConvBnAct<T>& project() const { return project_; }

 private:
  std::string name_;
  SkipBlockSpec spec_;
  ConvBnAct<T> expand_;
  ConvBnAct<T> depthwise_;
  ConvBnAct<T> project_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed);

  NodeId operator()(Binding<T>& b, NodeId x) const;
  std::size_t weight_index() const { return weight_; }
  std::size_t bias_index() const { return bias_; }

 private:
  std::size_t weight_ = 0;
  std::size_t bias_ = 0;
};

}  // namespace biasloss
