#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "biasloss/config.hpp"
#include "biasloss/data.hpp"
#include "biasloss/losses.hpp"
#include "biasloss/micronet.hpp"

namespace biasloss {

/// Count, sum, max and min of per-sample variances at one layer.
struct LayerProbe {
  std::string layer;
  std::size_t count = 0;
  double sum = 0.0;
  double max = -std::numeric_limits<double>::infinity();
  double min = std::numeric_limits<double>::infinity();

  void add(double variance);
  void merge(const LayerProbe& other);
  double avg() const { return count ? sum / static_cast<double>(count) : 0.0; }
};

struct VarianceProfile {
  std::string model_id;
  std::string dataset_id;
  std::string loss_id;
  std::vector<LayerProbe> rows;  // network depth order

  const LayerProbe& row(const std::string& layer) const;
  /// Row-wise merge of two profiles over the same layers.
  VarianceProfile merged(const VarianceProfile& other) const;
  std::string to_csv() const;
};

/// Eval-mode pass over ds recording the unbiased per-sample variance of each
/// named layer output. An empty layer list selects every probe.
VarianceProfile profile(MicroNet<float>& net, const Dataset& ds, const std::vector<std::string>& layers,
                        const TrainConfig& cfg);

struct DepthTrend {
  bool decays = false;  // avg(last) < avg(early)
  double ratio = 1.0;   // avg(early) / avg(last)
};

DepthTrend depth_trend(const VarianceProfile& profile, const std::string& early_layer, const std::string& last_layer);
DepthTrend depth_trend(double early_avg, double last_avg);

struct BiasCurveRow {
  double alpha;
  double beta;
  double v;
  double z_raw;
  double z_clamped;
};

/// z(v) on the grid alphas x betas x {0, 1/(samples-1), ..., 1}.
std::vector<BiasCurveRow> bias_curve(const std::vector<double>& alphas, const std::vector<double>& betas,
                                     std::size_t samples, const BiasLossConfig& base = {});
std::string bias_curve_csv(const std::vector<BiasCurveRow>& rows);

}  // namespace biasloss
