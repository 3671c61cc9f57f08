#pragma once

#include <cstdint>

#include "biasloss/losses.hpp"
#include "biasloss/micronet.hpp"
#include "biasloss/ops.hpp"
#include "test_util.hpp"

namespace testutil {

/// Three inverted residual blocks with a skip block from the stem output to
/// the input of block 2, sized for exhaustive finite differences.
inline MicroNetSpec three_block_spec() {
  MicroNetSpec s;
  s.in_channels = 2;
  s.in_h = 8;
  s.in_w = 8;
  s.stem_channels = 4;
  s.stages = {
      {8, 4, 1, 3, Activation::Relu},
      {12, 8, 2, 3, Activation::HardSwish},
      {16, 8, 1, 3, Activation::HardSwish},
  };
  s.skips = {{0, 2, 8}};
  s.head_channels = 12;
  s.num_classes = 4;
  s.dropout = 0.2;
  return s;
}

/// Gradient of the chosen loss with respect to every model parameter, against
/// central differences. With detached bias weights the weights are frozen at
/// their unperturbed values for the difference quotients.
inline GradCheck micro_model_gradcheck(std::uint64_t seed, const LossSpec& loss, double eps = 1e-4) {
  const MicroNetSpec spec = three_block_spec();
  MicroNet<double> net(spec, seed);
  // Batchnorm affine parameters start at gamma = 1, beta = 0, where channels
  // that are constant within the batch land exactly on the ReLU kink.
  std::uint64_t stream = 5000 + 100 * seed;
  for (auto& p : net.parameters().params())
    if (!p.weight_decay)
      p.value = p.name.ends_with(".gamma") ? random_tensor<double>(p.value.shape(), stream++, 0.5, 1.5, seed)
                                           : random_tensor<double>(p.value.shape(), stream++, -0.5, 0.5, seed);
  const std::size_t batch = 4;
  Graph<double> g;
  const NodeId in = g.input("images");
  g.set_value(in, random_tensor<double>({batch, spec.in_channels, spec.in_h, spec.in_w}, 900 + seed, -2.0, 2.0,
                                        seed));
  const Tensor<double> mask = dropout_mask<double>(net.dropout_mask_shape(batch), spec.dropout, seed, 0);
  const ModelOutputs out = net.build(g, in, Mode::Train, &mask, true);
  const LossNodes ln = build_loss(g, out.logits, out.features, random_labels(batch, spec.num_classes, seed), loss);

  std::vector<NodeId> leaves;
  for (const auto& p : out.params)
    if (p) leaves.push_back(*p);

  std::function<void(Graph<double>&)> freeze;
  if (ln.weights && loss.bias.detach_weight) {
    freeze = [&](Graph<double>& gr) {
      const NodeId weighted = gr.inputs(ln.loss).at(0);
      const auto& args = gr.inputs(weighted);
      const std::size_t slot = args.at(0) == *ln.weights ? 0 : 1;
      gr.replace_input(weighted, slot, gr.constant(gr.value(*ln.weights)));
    };
  }
  return check_gradients(g, ln.loss, leaves, eps, 1e-6, freeze);
}

}  // namespace testutil
