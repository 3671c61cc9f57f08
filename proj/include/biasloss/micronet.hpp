#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "biasloss/layers.hpp"

namespace biasloss {

struct StageSpec {
  std::size_t expand_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  std::size_t kernel = 3;
  Activation activation = Activation::Relu;
};

/// Feature point k is the input of block k; point stages.size() is the input
/// of the head. A skip block reads point `source` and is added to point `dest`.
struct SkipInsertion {
  std::size_t source = 0;
  std::size_t dest = 0;
  std::size_t expand_channels = 32;
};

struct MicroNetSpec {
  std::size_t in_channels = 1;
  std::size_t in_h = 28;
  std::size_t in_w = 28;
  std::size_t stem_channels = 8;
  std::size_t stem_stride = 1;
  std::vector<StageSpec> stages;
  std::vector<SkipInsertion> skips;
  std::size_t head_channels = 64;
  double dropout = 0.2;
  std::size_t num_classes = 10;
  double width_multiplier = 1.0;
  bool use_se = false;

  /// The default five-block layout with one skip block from the stem output
  /// to the input of block 4.
  static MicroNetSpec micro(std::size_t in_channels = 1, std::size_t in_hw = 28, std::size_t num_classes = 10);

  void validate() const;
  /// Canonical one-line text form, used for config hashing.
  std::string describe() const;
};

/// round(c * multiplier / 4) * 4, at least 4.
std::size_t round_channels(std::size_t channels, double multiplier);

/// Channel and spatial extents after width scaling.
struct MicroNetPlan {
  struct Point {
    std::size_t channels;
    std::size_t h;
    std::size_t w;
  };
  std::size_t stem_channels = 0;
  std::vector<InvertedResidualSpec> blocks;
  std::vector<SkipBlockSpec> skips;
  std::vector<Point> points;  // stages.size() + 1 feature points
  std::size_t head_channels = 0;
};

MicroNetPlan plan_micronet(const MicroNetSpec& spec);

struct ModelOutputs {
  NodeId logits = 0;
  NodeId features = 0;  // last conv feature map, before pooling and dropout
  std::vector<std::pair<std::string, NodeId>> probes;  // in network depth order
  std::vector<std::optional<NodeId>> params;           // leaf per store index
};

template <typename T>
class MicroNet {
 public:
  explicit MicroNet(MicroNetSpec spec, std::uint64_t seed = 0);

  /// Appends the network to g. dropout_mask, if given, multiplies the pooled
  /// head features in train mode; param_grads selects parameter leaves over
  /// constants.
  ModelOutputs build(Graph<T>& g, NodeId input, Mode mode, const Tensor<T>* dropout_mask = nullptr,
                     bool param_grads = true);

  const MicroNetSpec& spec() const { return spec_; }
  const MicroNetPlan& plan() const { return plan_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }
  std::size_t parameter_count() const { return store_.scalar_count(); }
  /// Probe names in depth order.
  std::vector<std::string> layer_names() const;
  Shape dropout_mask_shape(std::size_t batch) const { return {batch, plan_.head_channels}; }

 private:
  MicroNetSpec spec_;
  MicroNetPlan plan_;
  ParameterStore<T> store_;
  ConvBnAct<T> stem_;
  std::vector<InvertedResidual<T>> blocks_;
  std::vector<SkipBlock<T>> skips_;
  ConvBnAct<T> head_;
  Linear<T> classifier_;
};

/// Inverted dropout mask: each entry is 0 with probability p, else 1/(1-p).
template <typename T>
Tensor<T> dropout_mask(const Shape& shape, double p, std::uint64_t seed, std::uint64_t stream);

extern template class MicroNet<float>;
extern template class MicroNet<double>;

}  // namespace biasloss
