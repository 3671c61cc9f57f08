#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "biasloss/graph.hpp"

namespace biasloss {

struct BiasLossConfig {
  double alpha = 0.3;
  double beta = 0.3;
  double clamp_lo = 0.5;
  double clamp_hi = 1.5;
  // Scaled variance assigned to every sample when the batch spread is below
  // degenerate_epsilon (including single-sample batches).
  double degenerate_value = 1.0;
  double degenerate_epsilon = 1e-12;
  // Treat z(v) as a per-sample constant during differentiation.
  bool detach_weight = true;

  void validate() const;
};

/// Per-sample intermediates of one bias-loss evaluation.
struct VarianceRecord {
  std::vector<double> raw;        // unbiased per-sample feature-map variance
  std::vector<double> scaled;     // min-max scaled into [0, 1]
  std::vector<double> unclamped;  // exp(alpha * scaled) - beta
  std::vector<double> weight;     // unclamped clipped to [clamp_lo, clamp_hi]
  double batch_min = 0.0;
  double batch_max = 0.0;
  bool degenerate = false;

  std::size_t size() const { return raw.size(); }
  std::size_t clamped_low(const BiasLossConfig& cfg) const;
  std::size_t clamped_high(const BiasLossConfig& cfg) const;
  std::string describe() const;
};

struct ScaledVariances {
  std::vector<double> scaled;
  double batch_min = 0.0;
  double batch_max = 0.0;
  bool degenerate = false;
};

/// Sum((t - mean)^2) / (n - 1), accumulated in double with two passes.
template <typename T>
double sample_variance(std::span<const T> row);

template <typename T>
std::vector<double> batch_variances(const Tensor<T>& feature_map);

ScaledVariances minmax_scale(std::span<const double> raw, const BiasLossConfig& cfg);

/// exp(alpha * v) - beta, before clamping.
double bias_weight_raw(double scaled_variance, const BiasLossConfig& cfg);
double bias_weight(double scaled_variance, const BiasLossConfig& cfg);

template <typename T>
VarianceRecord variance_record(const Tensor<T>& feature_map, const BiasLossConfig& cfg);

template <typename T>
struct LossBatch {
  Tensor<T> logits;           // [N, k]
  std::vector<int> labels;    // N entries in [0, k)
  Tensor<T> feature_map;      // [N, c, h, w]; unused by cross-entropy and focal loss

  void validate(bool need_features) const;
};

/// -log softmax(logits)[label] per row, computed with max subtraction.
template <typename T>
std::vector<double> per_sample_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

template <typename T>
double cross_entropy(const LossBatch<T>& batch);

struct BiasLossValue {
  double loss = 0.0;
  VarianceRecord record;
};

template <typename T>
BiasLossValue bias_loss(const LossBatch<T>& batch, const BiasLossConfig& cfg);

template <typename T>
double focal_loss(const LossBatch<T>& batch, double gamma);

enum class LossKind { CrossEntropy, Focal, Bias };

std::string loss_kind_name(LossKind kind);
LossKind loss_kind_from_name(const std::string& name);

struct LossSpec {
  LossKind kind = LossKind::CrossEntropy;
  BiasLossConfig bias;
  double focal_gamma = 2.0;
};

struct LossNodes {
  NodeId loss = 0;        // scalar
  NodeId per_sample = 0;  // [N] unweighted per-sample loss terms
  std::optional<NodeId> weights;  // [N] bias weights (bias loss only)
};

/// Appends the selected loss on top of logits (and the feature map, for the
/// bias loss) and returns the relevant node ids.
template <typename T>
LossNodes build_loss(Graph<T>& g, NodeId logits, NodeId feature_map, std::vector<int> labels, const LossSpec& spec);

}  // namespace biasloss

namespace biasloss::ops {

template <typename T>
NodeId softmax_cross_entropy(Graph<T>& g, NodeId logits, std::vector<int> labels);

template <typename T>
NodeId focal(Graph<T>& g, NodeId logits, std::vector<int> labels, double gamma);

/// Unbiased per-sample variance of a rank-4 tensor: [N, c, h, w] -> [N].
template <typename T>
NodeId row_variance(Graph<T>& g, NodeId feature_map);

/// Min-max scaling with the batch min and max held constant for
/// differentiation; the degenerate case has zero gradient.
template <typename T>
NodeId minmax_scale(Graph<T>& g, NodeId raw, const BiasLossConfig& cfg);

/// Clamped bias weights computed from the feature map; gradient does not flow.
template <typename T>
NodeId bias_weight(Graph<T>& g, NodeId feature_map, const BiasLossConfig& cfg);

}  // namespace biasloss::ops
