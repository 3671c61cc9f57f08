#include "biasloss/micronet.hpp"

#include <cmath>
#include <sstream>

#include "biasloss/ops.hpp"
#include "biasloss/rng.hpp"

namespace biasloss {

MicroNetSpec MicroNetSpec::micro(std::size_t in_channels, std::size_t in_hw, std::size_t num_classes) {
  MicroNetSpec s;
  s.in_channels = in_channels;
  s.in_h = in_hw;
  s.in_w = in_hw;
  s.num_classes = num_classes;
  s.stages = {
      {16, 8, 1, 3, Activation::Relu},       {24, 12, 2, 3, Activation::Relu},
      {36, 12, 1, 3, Activation::Relu},      {48, 24, 2, 3, Activation::HardSwish},
      {72, 24, 1, 3, Activation::HardSwish},
  };
  s.skips = {{0, 4, 32}};
  return s;
}

std::size_t round_channels(std::size_t channels, double multiplier) {
  const double scaled = static_cast<double>(channels) * multiplier;
  const long rounded = std::lround(scaled / 4.0) * 4;
  return static_cast<std::size_t>(std::max(4L, rounded));
}

void MicroNetSpec::validate() const {
  if (!(width_multiplier > 0.0) || !std::isfinite(width_multiplier))
    throw BuildError("width_multiplier must be positive");
  if (in_channels == 0 || in_h == 0 || in_w == 0) throw BuildError("input extent must be positive");
  if (stem_channels == 0 || stem_stride == 0 || head_channels == 0) throw BuildError("stem/head extent must be positive");
  if (num_classes < 2) throw BuildError("num_classes must be at least 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw BuildError("dropout must lie in [0, 1)");
  if (stages.empty()) throw BuildError("at least one stage is required");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StageSpec& st = stages[i];
    if (st.expand_channels == 0 || st.out_channels == 0 || st.stride == 0 || st.kernel % 2 == 0)
      throw BuildError("stage " + std::to_string(i) + " is malformed");
  }
  for (const SkipInsertion& s : skips) {
    if (s.source >= s.dest)
      throw BuildError("skip insertion " + std::to_string(s.source) + "->" + std::to_string(s.dest) +
                       " must go forward");
    if (s.dest > stages.size())
      throw BuildError("skip destination " + std::to_string(s.dest) + " exceeds block count " +
                       std::to_string(stages.size()));
    if (s.expand_channels == 0) throw BuildError("skip expand_channels must be positive");
  }
}

std::string MicroNetSpec::describe() const {
  std::ostringstream os;
  os.precision(17);
  os << "in=" << in_channels << 'x' << in_h << 'x' << in_w << " stem=" << stem_channels << '/' << stem_stride
     << " stages=";
  for (const StageSpec& st : stages)
    os << '(' << st.expand_channels << ',' << st.out_channels << ',' << st.stride << ',' << st.kernel << ','
       << activation_name(st.activation) << ')';
  os << " skips=";
  for (const SkipInsertion& s : skips) os << '(' << s.source << ',' << s.dest << ',' << s.expand_channels << ')';
  os << " head=" << head_channels << " dropout=" << dropout << " classes=" << num_classes
     << " width=" << width_multiplier << " se=" << use_se;
  return os.str();
}

MicroNetPlan plan_micronet(const MicroNetSpec& spec) {
  spec.validate();
  const double m = spec.width_multiplier;
  MicroNetPlan plan;
  plan.stem_channels = round_channels(spec.stem_channels, m);
  std::size_t h = conv_out_extent(spec.in_h, 3, spec.stem_stride, 1);
  std::size_t w = conv_out_extent(spec.in_w, 3, spec.stem_stride, 1);
  std::size_t c = plan.stem_channels;
  plan.points.push_back({c, h, w});
  for (const StageSpec& st : spec.stages) {
    InvertedResidualSpec b;
    b.in_channels = c;
    b.expand_channels = round_channels(st.expand_channels, m);
    b.out_channels = round_channels(st.out_channels, m);
    b.stride = st.stride;
    b.kernel = st.kernel;
    b.activation = st.activation;
    b.use_se = spec.use_se;
    if (h + 2 * (st.kernel / 2) < st.kernel || w + 2 * (st.kernel / 2) < st.kernel)
      throw BuildError("feature map too small for stage kernel");
    h = conv_out_extent(h, st.kernel, st.stride, st.kernel / 2);
    w = conv_out_extent(w, st.kernel, st.stride, st.kernel / 2);
    c = b.out_channels;
    plan.blocks.push_back(b);
    plan.points.push_back({c, h, w});
  }
  for (const SkipInsertion& s : spec.skips) {
    const auto& src = plan.points[s.source];
    const auto& dst = plan.points[s.dest];
    if (dst.h > src.h || dst.w > src.w)
      throw BuildError("skip destination " + std::to_string(s.dest) + " is spatially larger than its source");
    SkipBlockSpec k;
    k.in_channels = src.channels;
    k.expand_channels = round_channels(s.expand_channels, m);
    k.out_channels = dst.channels;
    k.target_h = dst.h;
    k.target_w = dst.w;
    plan.skips.push_back(k);
  }
  plan.head_channels = round_channels(spec.head_channels, m);
  return plan;
}

template <typename T>
MicroNet<T>::MicroNet(MicroNetSpec spec, std::uint64_t seed) : spec_(std::move(spec)), plan_(plan_micronet(spec_)) {
  stem_ = ConvBnAct<T>(store_, "stem",
                       Conv2dSpec{spec_.in_channels, plan_.stem_channels, 3, 3, spec_.stem_stride, 1, 1, false},
                       Activation::HardSwish, seed);
  for (std::size_t i = 0; i < plan_.skips.size(); ++i)
    skips_.emplace_back(store_, "skip" + std::to_string(i), plan_.skips[i], seed);
  for (std::size_t i = 0; i < plan_.blocks.size(); ++i)
    blocks_.emplace_back(store_, "block" + std::to_string(i), plan_.blocks[i], seed);
  const std::size_t last = plan_.points.back().channels;
  head_ = ConvBnAct<T>(store_, "head", Conv2dSpec{last, plan_.head_channels, 1, 1, 1, 0, 1, false},
                       Activation::HardSwish, seed);
  classifier_ = Linear<T>(store_, "classifier", plan_.head_channels, spec_.num_classes, seed);
}

template <typename T>
ModelOutputs MicroNet<T>::build(Graph<T>& g, NodeId input, Mode mode, const Tensor<T>* mask, bool param_grads) {
  Binding<T> b(g, store_, mode, param_grads);
  NodeId x = stem_(b, input);
  std::vector<std::optional<NodeId>> pending(skips_.size());
  for (std::size_t point = 0; point <= blocks_.size(); ++point) {
    for (std::size_t k = 0; k < skips_.size(); ++k)
      if (spec_.skips[k].dest == point) x = ops::add(g, x, *pending[k]);
    for (std::size_t k = 0; k < skips_.size(); ++k)
      if (spec_.skips[k].source == point) pending[k] = skips_[k](b, x);
    if (point < blocks_.size()) x = blocks_[point](b, x);
  }
  ModelOutputs out;
  out.features = head_(b, x);
  NodeId pooled = ops::flatten(g, ops::adaptive_avg_pool(g, out.features, 1, 1));
  if (mode == Mode::Train && mask) pooled = ops::mul(g, pooled, g.constant(*mask, "dropout_mask"));
  out.logits = classifier_(b, pooled);
  out.probes = b.probes();
  out.params = b.param_nodes();
  return out;
}

template <typename T>
std::vector<std::string> MicroNet<T>::layer_names() const {
  Graph<T> g;
  MicroNet<T> copy = *this;
  const ModelOutputs out = copy.build(g, g.input("x"), Mode::Eval, nullptr, false);
  std::vector<std::string> names;
  for (const auto& [name, id] : out.probes) names.push_back(name);
  return names;
}

template <typename T>
Tensor<T> dropout_mask(const Shape& shape, double p, std::uint64_t seed, std::uint64_t stream) {
  if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout probability must lie in [0, 1)");
  Tensor<T> mask(shape, T{1});
  if (p == 0.0) return mask;
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  CounterRng rng(seed, RngDomain::Dropout, stream);
  for (auto& v : mask.data()) v = rng.uniform() < p ? T{0} : keep;
  return mask;
}

template class MicroNet<float>;
template class MicroNet<double>;
template Tensor<float> dropout_mask<float>(const Shape&, double, std::uint64_t, std::uint64_t);
template Tensor<double> dropout_mask<double>(const Shape&, double, std::uint64_t, std::uint64_t);

}  // namespace biasloss
