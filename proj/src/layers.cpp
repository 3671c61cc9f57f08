#include "biasloss/layers.hpp"

#include <algorithm>
#include <cmath>

#include "biasloss/ops.hpp"
#include "biasloss/rng.hpp"

namespace biasloss {

template <typename T>
void ParameterStore<T>::claim(const std::string& name) {
  if (name.empty()) throw BuildError("parameter name must not be empty");
  if (std::find(names_.begin(), names_.end(), name) != names_.end())
    throw BuildError("duplicate parameter name '" + name + "'");
  names_.push_back(name);
}

template <typename T>
std::size_t ParameterStore<T>::add(std::string name, Tensor<T> value, bool weight_decay) {
  claim(name);
  params_.push_back({std::move(name), std::move(value), weight_decay});
  return params_.size() - 1;
}

template <typename T>
std::size_t ParameterStore<T>::add_batchnorm(std::string name, std::size_t channels) {
  claim(name);
  bn_.emplace_back(channels);
  bn_names_.push_back(std::move(name));
  return bn_.size() - 1;
}

template <typename T>
std::optional<std::size_t> ParameterStore<T>::find(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  return std::nullopt;
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
Binding<T>::Binding(Graph<T>& g, ParameterStore<T>& store, Mode mode, bool param_grads)
    : graph_(&g), store_(&store), mode_(mode), param_grads_(param_grads), nodes_(store.size()) {}

template <typename T>
NodeId Binding<T>::param(std::size_t index) {
  if (index >= store_->size()) throw BuildError("parameter index " + std::to_string(index) + " out of range");
  if (nodes_.size() < store_->size()) nodes_.resize(store_->size());
  if (!nodes_[index]) {
    const Parameter<T>& p = store_->param(index);
    nodes_[index] = param_grads_ ? graph_->parameter(p.value, p.name) : graph_->constant(p.value, p.name);
  }
  return *nodes_[index];
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::None: return "none";
    case Activation::Relu: return "relu";
    case Activation::HardSwish: return "hswish";
  }
  return "none";
}

Activation activation_from_name(const std::string& name) {
  if (name == "none") return Activation::None;
  if (name == "relu") return Activation::Relu;
  if (name == "hswish" || name == "hard_swish") return Activation::HardSwish;
  throw ConfigError("unknown activation '" + name + "'");
}

template <typename T>
NodeId activate(Graph<T>& g, NodeId x, Activation a) {
  switch (a) {
    case Activation::Relu: return ops::relu(g, x);
    case Activation::HardSwish: return ops::hard_swish(g, x);
    case Activation::None: break;
  }
  return x;
}

template <typename T>
Tensor<T> kaiming_uniform(const Shape& shape, std::size_t fan_in, std::uint64_t seed, std::uint64_t stream) {
  if (fan_in == 0) throw BuildError("kaiming_uniform: fan_in must be positive");
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  CounterRng rng(seed, RngDomain::Init, stream);
  Tensor<T> t(shape, T{0});
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

void Conv2dSpec::validate() const {
  if (in_channels == 0 || out_channels == 0 || groups == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0)
    throw BuildError("conv spec has a zero extent");
  if (in_channels % groups != 0 || out_channels % groups != 0)
    throw BuildError("conv channels " + std::to_string(in_channels) + "->" + std::to_string(out_channels) +
                     " not divisible by groups " + std::to_string(groups));
}

template <typename T>
Conv2d<T>::Conv2d(ParameterStore<T>& store, const std::string& name, Conv2dSpec spec, std::uint64_t seed)
    : spec_(spec) {
  spec_.validate();
  const std::size_t stream = store.size();
  weight_ = store.add(name + ".weight", kaiming_uniform<T>(spec_.weight_shape(), spec_.fan_in(), seed, stream));
  if (spec_.bias) bias_ = store.add(name + ".bias", Tensor<T>({spec_.out_channels}, T{0}));
}

template <typename T>
NodeId Conv2d<T>::operator()(Binding<T>& b, NodeId x) const {
  std::optional<NodeId> bias;
  if (bias_) bias = b.param(*bias_);
  return ops::conv2d(b.graph(), x, b.param(weight_), bias, spec_.params());
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(ParameterStore<T>& store, const std::string& name, std::size_t channels) {
  gamma_ = store.add(name + ".gamma", Tensor<T>({channels}, T{1}), false);
  beta_ = store.add(name + ".beta", Tensor<T>({channels}, T{0}), false);
  state_ = store.add_batchnorm(name, channels);
}

template <typename T>
NodeId BatchNorm2d<T>::operator()(Binding<T>& b, NodeId x) const {
  return ops::batchnorm(b.graph(), x, b.param(gamma_), b.param(beta_), b.batchnorm(state_), b.mode());
}

template <typename T>
ConvBnAct<T>::ConvBnAct(ParameterStore<T>& store, std::string name, Conv2dSpec spec, Activation act,
                        std::uint64_t seed)
    : name_(std::move(name)),
      conv_(store, name_ + ".conv", spec, seed),
      bn_(store, name_ + ".bn", spec.out_channels),
      act_(act) {}

template <typename T>
NodeId ConvBnAct<T>::operator()(Binding<T>& b, NodeId x) const {
  const NodeId y = activate(b.graph(), bn_(b, conv_(b, x)), act_);
  b.probe(name_, y);
  return y;
}

template <typename T>
SqueezeExcite<T>::SqueezeExcite(ParameterStore<T>& store, const std::string& name, std::size_t channels,
                                std::size_t reduced, std::uint64_t seed)
    : reduce_(store, name + ".reduce", Conv2dSpec{channels, reduced, 1, 1, 1, 0, 1, true}, seed),
      expand_(store, name + ".expand", Conv2dSpec{reduced, channels, 1, 1, 1, 0, 1, true}, seed) {}

template <typename T>
NodeId SqueezeExcite<T>::operator()(Binding<T>& b, NodeId x) const {
  Graph<T>& g = b.graph();
  const NodeId pooled = ops::adaptive_avg_pool(g, x, 1, 1);
  const NodeId gate = ops::hard_sigmoid(g, expand_(b, ops::relu(g, reduce_(b, pooled))));
  return ops::mul(g, x, gate);
}

void InvertedResidualSpec::validate() const {
  if (in_channels == 0 || expand_channels == 0 || out_channels == 0 || stride == 0)
    throw BuildError("inverted residual has a zero extent");
  if (kernel % 2 == 0) throw BuildError("inverted residual kernel must be odd, got " + std::to_string(kernel));
}

template <typename T>
InvertedResidual<T>::InvertedResidual(ParameterStore<T>& store, std::string name, InvertedResidualSpec spec,
                                      std::uint64_t seed)
    : name_(std::move(name)), spec_(spec) {
  spec_.validate();
  const std::size_t e = spec_.expand_channels;
  expand_ = ConvBnAct<T>(store, name_ + ".expand", Conv2dSpec{spec_.in_channels, e, 1, 1, 1, 0, 1, false},
                         spec_.activation, seed);
  depthwise_ = ConvBnAct<T>(
      store, name_ + ".dw", Conv2dSpec{e, e, spec_.kernel, spec_.kernel, spec_.stride, spec_.kernel / 2, e, false},
      spec_.activation, seed);
  if (spec_.use_se) se_.emplace(store, name_ + ".se", e, std::max<std::size_t>(1, e / 4), seed);
  project_ = ConvBnAct<T>(store, name_ + ".project", Conv2dSpec{e, spec_.out_channels, 1, 1, 1, 0, 1, false},
                          Activation::None, seed);
}

template <typename T>
NodeId InvertedResidual<T>::operator()(Binding<T>& b, NodeId x) const {
  NodeId y = depthwise_(b, expand_(b, x));
  if (se_) y = (*se_)(b, y);
  y = project_(b, y);
  if (spec_.use_residual()) y = ops::add(b.graph(), x, y);
  b.probe(name_, y);
  return y;
}

void SkipBlockSpec::validate() const {
  if (in_channels == 0 || expand_channels == 0 || out_channels == 0 || target_h == 0 || target_w == 0)
    throw BuildError("skip block has a zero extent");
  if (kernel % 2 == 0) throw BuildError("skip block kernel must be odd, got " + std::to_string(kernel));
}

template <typename T>
SkipBlock<T>::SkipBlock(ParameterStore<T>& store, std::string name, SkipBlockSpec spec, std::uint64_t seed)
    : name_(std::move(name)), spec_(spec) {
  spec_.validate();
  const std::size_t e = spec_.expand_channels;
  expand_ = ConvBnAct<T>(store, name_ + ".expand", Conv2dSpec{spec_.in_channels, e, 1, 1, 1, 0, 1, false},
                         Activation::Relu, seed);
  depthwise_ = ConvBnAct<T>(store, name_ + ".dw",
                            Conv2dSpec{e, e, spec_.kernel, spec_.kernel, 1, spec_.kernel / 2, e, false},
                            Activation::Relu, seed);
  project_ = ConvBnAct<T>(store, name_ + ".project", Conv2dSpec{e, spec_.out_channels, 1, 1, 1, 0, 1, false},
                          Activation::None, seed);
}

template <typename T>
NodeId SkipBlock<T>::operator()(Binding<T>& b, NodeId x) const {
  const NodeId pooled = ops::adaptive_avg_pool(b.graph(), x, spec_.target_h, spec_.target_w);
  return project_(b, depthwise_(b, expand_(b, pooled)));
}

template <typename T>
Linear<T>::Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                  std::uint64_t seed) {
  if (in == 0 || out == 0) throw BuildError("linear layer has a zero extent");
  weight_ = store.add(name + ".weight", kaiming_uniform<T>({out, in}, in, seed, store.size()));
  bias_ = store.add(name + ".bias", Tensor<T>({out}, T{0}));
}

template <typename T>
NodeId Linear<T>::operator()(Binding<T>& b, NodeId x) const {
  return ops::linear(b.graph(), x, b.param(weight_), std::optional<NodeId>(b.param(bias_)));
}

#define BIASLOSS_INSTANTIATE_LAYERS(T)                                                                 \
  template class ParameterStore<T>;                                                                    \
  template class Binding<T>;                                                                           \
  template NodeId activate<T>(Graph<T>&, NodeId, Activation);                                          \
  template Tensor<T> kaiming_uniform<T>(const Shape&, std::size_t, std::uint64_t, std::uint64_t);      \
  template class Conv2d<T>;                                                                            \
  template class BatchNorm2d<T>;                                                                       \
  template class ConvBnAct<T>;                                                                         \
  template class SqueezeExcite<T>;                                                                     \
  template class InvertedResidual<T>;                                                                  \
  template class SkipBlock<T>;                                                                         \
  template class Linear<T>;

BIASLOSS_INSTANTIATE_LAYERS(float)
BIASLOSS_INSTANTIATE_LAYERS(double)

}  // namespace biasloss
