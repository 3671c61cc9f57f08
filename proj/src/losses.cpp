#include "biasloss/losses.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "biasloss/ops.hpp"

namespace biasloss {

void BiasLossConfig::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ConfigError("bias loss alpha and beta must be >= 0");
  if (!(clamp_lo <= clamp_hi)) throw ConfigError("bias loss clamp_lo must not exceed clamp_hi");
  if (!(degenerate_value >= 0.0 && degenerate_value <= 1.0)) {
    throw ConfigError("bias loss degenerate value must lie in [0, 1]");
  }
}

std::size_t VarianceRecord::clamped_low(const BiasLossConfig& cfg) const {
  return static_cast<std::size_t>(
      std::count_if(unclamped.begin(), unclamped.end(), [&](double z) { return z < cfg.clamp_lo; }));
}

std::size_t VarianceRecord::clamped_high(const BiasLossConfig& cfg) const {
  return static_cast<std::size_t>(
      std::count_if(unclamped.begin(), unclamped.end(), [&](double z) { return z > cfg.clamp_hi; }));
}

std::string VarianceRecord::describe() const {
  std::ostringstream os;
  os.precision(9);
  os << "batch_min=" << batch_min << " batch_max=" << batch_max << " degenerate=" << degenerate << '\n';
  os << "i,raw,scaled,unclamped,weight\n";
  for (std::size_t i = 0; i < raw.size(); ++i) {
    os << i << ',' << raw[i] << ',' << scaled[i] << ',' << unclamped[i] << ',' << weight[i] << '\n';
  }
  return os.str();
}

template <typename T>
double sample_variance(std::span<const T> row) {
  const std::size_t n = row.size();
  if (n < 2) throw DegenerateInputError("sample variance needs at least 2 values, got " + std::to_string(n));
  double sum = 0.0;
  for (T v : row) sum += static_cast<double>(v);
  const double mu = sum / static_cast<double>(n);
  double ss = 0.0;
  for (T v : row) {
    const double d = static_cast<double>(v) - mu;
    ss += d * d;
  }
  return ss / static_cast<double>(n - 1);
}

template <typename T>
std::vector<double> batch_variances(const Tensor<T>& feature_map) {
  const RowView<T> rows = unfold(feature_map);
  if (rows.rows == 0) throw DegenerateInputError("batch_variances on an empty batch");
  std::vector<double> out(rows.rows);
  for (std::size_t i = 0; i < rows.rows; ++i) out[i] = sample_variance(rows.row(i));
  return out;
}

ScaledVariances minmax_scale(std::span<const double> raw, const BiasLossConfig& cfg) {
  if (raw.empty()) throw DegenerateInputError("minmax_scale on an empty batch");
  ScaledVariances out;
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  out.batch_min = *lo;
  out.batch_max = *hi;
  const double spread = out.batch_max - out.batch_min;
  out.scaled.resize(raw.size());
  if (spread < cfg.degenerate_epsilon) {
    out.degenerate = true;
    std::fill(out.scaled.begin(), out.scaled.end(), cfg.degenerate_value);
    return out;
  }
  for (std::size_t i = 0; i < raw.size(); ++i) out.scaled[i] = (raw[i] - out.batch_min) / spread;
  return out;
}

double bias_weight_raw(double scaled_variance, const BiasLossConfig& cfg) {
  return std::exp(scaled_variance * cfg.alpha) - cfg.beta;
}

double bias_weight(double scaled_variance, const BiasLossConfig& cfg) {
  return std::clamp(bias_weight_raw(scaled_variance, cfg), cfg.clamp_lo, cfg.clamp_hi);
}

template <typename T>
VarianceRecord variance_record(const Tensor<T>& feature_map, const BiasLossConfig& cfg) {
  VarianceRecord rec;
  rec.raw = batch_variances(feature_map);
  ScaledVariances s = minmax_scale(rec.raw, cfg);
  rec.scaled = std::move(s.scaled);
  rec.batch_min = s.batch_min;
  rec.batch_max = s.batch_max;
  rec.degenerate = s.degenerate;
  rec.unclamped.resize(rec.raw.size());
  rec.weight.resize(rec.raw.size());
  for (std::size_t i = 0; i < rec.raw.size(); ++i) {
    rec.unclamped[i] = bias_weight_raw(rec.scaled[i], cfg);
    rec.weight[i] = std::clamp(rec.unclamped[i], cfg.clamp_lo, cfg.clamp_hi);
  }
  return rec;
}

template <typename T>
void LossBatch<T>::validate(bool need_features) const {
  if (logits.rank() != 2) throw ShapeError("logits must be [N, k], got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("label count does not match logits rows");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) throw ContractError("label " + std::to_string(y) + " out of range");
  }
  if (need_features) {
    if (feature_map.rank() != 4 || feature_map.dim(0) != n) {
      throw ShapeError("feature map must be [N, c, h, w] with N=" + std::to_string(n) + ", got " +
                       shape_str(feature_map.shape()));
    }
  }
}

template <typename T>
std::vector<double> per_sample_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.ptr() + i * k;
    double m = row[0];
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, static_cast<double>(row[j]));
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(static_cast<double>(row[j]) - m);
    out[i] = m + std::log(s) - static_cast<double>(row[labels[i]]);
  }
  return out;
}

template <typename T>
double cross_entropy(const LossBatch<T>& batch) {
  batch.validate(false);
  const auto ce = per_sample_cross_entropy(batch.logits, batch.labels);
  double s = 0.0;
  for (double v : ce) s += v;
  return s / static_cast<double>(ce.size());
}

template <typename T>
BiasLossValue bias_loss(const LossBatch<T>& batch, const BiasLossConfig& cfg) {
  batch.validate(true);
  cfg.validate();
  BiasLossValue out;
  out.record = variance_record(batch.feature_map, cfg);
  const auto ce = per_sample_cross_entropy(batch.logits, batch.labels);
  double s = 0.0;
  for (std::size_t i = 0; i < ce.size(); ++i) s += out.record.weight[i] * ce[i];
  out.loss = s / static_cast<double>(ce.size());
  return out;
}

template <typename T>
double focal_loss(const LossBatch<T>& batch, double gamma) {
  batch.validate(false);
  if (!(gamma >= 0.0)) throw ConfigError("focal gamma must be >= 0");
  const auto ce = per_sample_cross_entropy(batch.logits, batch.labels);
  double s = 0.0;
  for (double l : ce) {
    // l = -log p, so (1 - p)^gamma = (1 - exp(-l))^gamma; -expm1 keeps precision as p -> 1.
    const double mod = gamma == 0.0 ? 1.0 : std::pow(-std::expm1(-l), gamma);
    s += mod * l;
  }
  return s / static_cast<double>(ce.size());
}

std::string loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::CrossEntropy: return "ce";
    case LossKind::Focal: return "focal";
    case LossKind::Bias: return "bias";
  }
  return "?";
}

LossKind loss_kind_from_name(const std::string& name) {
  if (name == "ce") return LossKind::CrossEntropy;
  if (name == "focal") return LossKind::Focal;
  if (name == "bias") return LossKind::Bias;
  throw ConfigError("unknown loss '" + name + "' (expected ce, focal or bias)");
}

namespace {

template <typename T>
class SoftmaxCrossEntropyOp final : public Op<T> {
 public:
  SoftmaxCrossEntropyOp(std::vector<int> labels, double gamma, bool focal)
      : labels_(std::move(labels)), gamma_(gamma), focal_(focal) {}

  std::string_view name() const override { return focal_ ? "focal" : "softmax_cross_entropy"; }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Tensor<T>& z = *in[0];
    if (z.rank() != 2) throw ShapeError("logits must be [N, k], got " + shape_str(z.shape()));
    n_ = z.dim(0);
    k_ = z.dim(1);
    if (labels_.size() != n_) throw ShapeError("label count does not match logits rows");
    probs_.resize(n_ * k_);
    Tensor<T> out({n_});
    for (std::size_t i = 0; i < n_; ++i) {
      const int y = labels_[i];
      if (y < 0 || static_cast<std::size_t>(y) >= k_) throw ContractError("label out of range");
      const T* row = z.ptr() + i * k_;
      T m = row[0];
      for (std::size_t j = 1; j < k_; ++j) m = std::max(m, row[j]);
      T s = T{0};
      for (std::size_t j = 0; j < k_; ++j) {
        const T e = std::exp(row[j] - m);
        probs_[i * k_ + j] = e;
        s += e;
      }
      for (std::size_t j = 0; j < k_; ++j) probs_[i * k_ + j] /= s;
      const T nll = m + std::log(s) - row[y];
      if (!focal_ || gamma_ == 0.0) {
        out[i] = nll;
      } else {
        const T one_minus_p = -std::expm1(-nll);
        out[i] = static_cast<T>(std::pow(one_minus_p, static_cast<T>(gamma_))) * nll;
      }
    }
    return out;
  }

  void backward(std::span<const Tensor<T>* const>, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin) override {
    if (!gin[0]) return;
    T* gz = gin[0]->ptr();
    for (std::size_t i = 0; i < n_; ++i) {
      const std::size_t y = static_cast<std::size_t>(labels_[i]);
      const T* p = probs_.data() + i * k_;
      // d nll / dz_j = p_j - [j == y]; the focal factor rescales that vector.
      T factor = gout[i];
      if (focal_ && gamma_ != 0.0) {
        const T py = p[y];
        const T one_minus_p = T{1} - py;
        const T g = static_cast<T>(gamma_);
        const T logp = std::log(py);
        // dFL/dz_j = [(1-p)^g - g (1-p)^(g-1) p log p] (p_j - [j==y])
        const T term1 = std::pow(one_minus_p, g);
        const T term2 = one_minus_p > T{0} ? g * std::pow(one_minus_p, g - T{1}) * py * logp : T{0};
        factor *= term1 - term2;
      }
      T* row = gz + i * k_;
      for (std::size_t j = 0; j < k_; ++j) row[j] += factor * (p[j] - (j == y ? T{1} : T{0}));
    }
  }

 private:
  std::vector<int> labels_;
  double gamma_;
  bool focal_;
  std::size_t n_ = 0, k_ = 0;
  std::vector<T> probs_;
};

template <typename T>
class RowVarianceOp final : public Op<T> {
 public:
  std::string_view name() const override { return "row_variance"; }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const RowView<T> rows = unfold(*in[0]);
    if (rows.cols < 2) throw DegenerateInputError("row_variance needs at least 2 values per sample");
    mean_.resize(rows.rows);
    Tensor<T> out({rows.rows});
    for (std::size_t i = 0; i < rows.rows; ++i) {
      const auto r = rows.row(i);
      double s = 0.0;
      for (T v : r) s += static_cast<double>(v);
      mean_[i] = s / static_cast<double>(rows.cols);
      out[i] = static_cast<T>(sample_variance(r));
    }
    return out;
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin) override {
    if (!gin[0]) return;
    const RowView<T> rows = unfold(*in[0]);
    const double denom = static_cast<double>(rows.cols - 1);
    for (std::size_t i = 0; i < rows.rows; ++i) {
      const auto r = rows.row(i);
      T* gx = gin[0]->ptr() + i * rows.cols;
      const double k = 2.0 * gout[i] / denom;
      for (std::size_t j = 0; j < rows.cols; ++j) gx[j] += static_cast<T>(k * (r[j] - mean_[i]));
    }
  }

 private:
  std::vector<double> mean_;
};

template <typename T>
class MinMaxScaleOp final : public Op<T> {
 public:
  explicit MinMaxScaleOp(BiasLossConfig cfg) : cfg_(cfg) {}

  std::string_view name() const override { return "minmax_scale"; }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const Tensor<T>& v = *in[0];
    std::vector<double> raw(v.data().begin(), v.data().end());
    ScaledVariances s = biasloss::minmax_scale(raw, cfg_);
    spread_ = s.degenerate ? 0.0 : s.batch_max - s.batch_min;
    std::vector<T> out(s.scaled.begin(), s.scaled.end());
    return Tensor<T>(v.shape(), std::move(out));
  }

  void backward(std::span<const Tensor<T>* const>, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin) override {
    if (!gin[0] || spread_ == 0.0) return;
    const T inv = static_cast<T>(1.0 / spread_);
    for (std::size_t i = 0; i < gout.size(); ++i) (*gin[0])[i] += gout[i] * inv;
  }

 private:
  BiasLossConfig cfg_;
  double spread_ = 0.0;
};

template <typename T>
class BiasWeightOp final : public Op<T> {
 public:
  explicit BiasWeightOp(BiasLossConfig cfg) : cfg_(cfg) {}

  std::string_view name() const override { return "bias_weight"; }
  bool differentiable() const override { return false; }

  Tensor<T> forward(std::span<const Tensor<T>* const> in) override {
    const VarianceRecord rec = variance_record(*in[0], cfg_);
    const std::size_t n = rec.weight.size();
    return Tensor<T>({n}, std::vector<T>(rec.weight.begin(), rec.weight.end()));
  }

  void backward(std::span<const Tensor<T>* const>, const Tensor<T>&, const Tensor<T>&,
                std::span<Tensor<T>* const>) override {}

 private:
  BiasLossConfig cfg_;
};

}  // namespace

template <typename T>
LossNodes build_loss(Graph<T>& g, NodeId logits, NodeId feature_map, std::vector<int> labels, const LossSpec& spec) {
  LossNodes nodes;
  switch (spec.kind) {
    case LossKind::CrossEntropy:
      nodes.per_sample = ops::softmax_cross_entropy(g, logits, std::move(labels));
      nodes.loss = ops::mean(g, nodes.per_sample);
      break;
    case LossKind::Focal:
      nodes.per_sample = ops::focal(g, logits, std::move(labels), spec.focal_gamma);
      nodes.loss = ops::mean(g, nodes.per_sample);
      break;
    case LossKind::Bias: {
      spec.bias.validate();
      nodes.per_sample = ops::softmax_cross_entropy(g, logits, std::move(labels));
      NodeId w;
      if (spec.bias.detach_weight) {
        w = ops::bias_weight(g, feature_map, spec.bias);
      } else {
        const BiasLossConfig& c = spec.bias;
        NodeId scaled = ops::minmax_scale(g, ops::row_variance(g, feature_map), c);
        NodeId z = ops::add_scalar(g, ops::exp(g, ops::scale(g, scaled, static_cast<T>(c.alpha))),
                                   static_cast<T>(-c.beta));
        w = ops::clamp(g, z, static_cast<T>(c.clamp_lo), static_cast<T>(c.clamp_hi));
      }
      nodes.weights = w;
      nodes.loss = ops::mean(g, ops::mul(g, w, nodes.per_sample));
      break;
    }
  }
  return nodes;
}

}  // namespace biasloss

namespace biasloss::ops {

template <typename T>
NodeId softmax_cross_entropy(Graph<T>& g, NodeId logits, std::vector<int> labels) {
  return g.apply(std::make_unique<SoftmaxCrossEntropyOp<T>>(std::move(labels), 0.0, false), {logits});
}

template <typename T>
NodeId focal(Graph<T>& g, NodeId logits, std::vector<int> labels, double gamma) {
  if (!(gamma >= 0.0)) throw ConfigError("focal gamma must be >= 0");
  return g.apply(std::make_unique<SoftmaxCrossEntropyOp<T>>(std::move(labels), gamma, true), {logits});
}

template <typename T>
NodeId row_variance(Graph<T>& g, NodeId feature_map) {
  return g.apply(std::make_unique<RowVarianceOp<T>>(), {feature_map});
}

template <typename T>
NodeId minmax_scale(Graph<T>& g, NodeId raw, const BiasLossConfig& cfg) {
  return g.apply(std::make_unique<MinMaxScaleOp<T>>(cfg), {raw});
}

template <typename T>
NodeId bias_weight(Graph<T>& g, NodeId feature_map, const BiasLossConfig& cfg) {
  return g.apply(std::make_unique<BiasWeightOp<T>>(cfg), {feature_map});
}

}  // namespace biasloss::ops

namespace biasloss {

#define BIASLOSS_INSTANTIATE_LOSSES(T)                                                                     \
  template double sample_variance<T>(std::span<const T>);                                                  \
  template std::vector<double> batch_variances<T>(const Tensor<T>&);                                       \
  template VarianceRecord variance_record<T>(const Tensor<T>&, const BiasLossConfig&);                     \
  template struct LossBatch<T>;                                                                            \
  template std::vector<double> per_sample_cross_entropy<T>(const Tensor<T>&, std::span<const int>);        \
  template double cross_entropy<T>(const LossBatch<T>&);                                                   \
  template BiasLossValue bias_loss<T>(const LossBatch<T>&, const BiasLossConfig&);                         \
  template double focal_loss<T>(const LossBatch<T>&, double);                                              \
  template LossNodes build_loss<T>(Graph<T>&, NodeId, NodeId, std::vector<int>, const LossSpec&);          \
  template NodeId ops::softmax_cross_entropy<T>(Graph<T>&, NodeId, std::vector<int>);                      \
  template NodeId ops::focal<T>(Graph<T>&, NodeId, std::vector<int>, double);                              \
  template NodeId ops::row_variance<T>(Graph<T>&, NodeId);                                                 \
  template NodeId ops::minmax_scale<T>(Graph<T>&, NodeId, const BiasLossConfig&);                          \
  template NodeId ops::bias_weight<T>(Graph<T>&, NodeId, const BiasLossConfig&);

BIASLOSS_INSTANTIATE_LOSSES(float)
BIASLOSS_INSTANTIATE_LOSSES(double)

}  // namespace biasloss
