#include "biasloss/diagnostics.hpp"

#include <algorithm>
#include <charconv>
#include <limits>

#include "biasloss/errors.hpp"

namespace biasloss {

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

void LayerProbe::add(double variance) {
  ++count;
  sum += variance;
  max = std::max(max, variance);
  min = std::min(min, variance);
}

void LayerProbe::merge(const LayerProbe& other) {
  count += other.count;
  sum += other.sum;
  max = std::max(max, other.max);
  min = std::min(min, other.min);
}

const LayerProbe& VarianceProfile::row(const std::string& layer) const {
  for (const auto& r : rows)
    if (r.layer == layer) return r;
  throw ProbeError("layer '" + layer + "' is not in the profile");
}

VarianceProfile VarianceProfile::merged(const VarianceProfile& other) const {
  if (other.rows.size() != rows.size()) throw ProbeError("profiles cover different layers");
  VarianceProfile out = *this;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].layer != other.rows[i].layer) throw ProbeError("profiles cover different layers");
    out.rows[i].merge(other.rows[i]);
  }
  return out;
}

std::string VarianceProfile::to_csv() const {
  std::string out = "layer,avg,max,min\n";
  for (const auto& r : rows) out += r.layer + "," + fmt(r.avg()) + "," + fmt(r.max) + "," + fmt(r.min) + "\n";
  return out;
}

VarianceProfile profile(MicroNet<float>& net, const Dataset& ds, const std::vector<std::string>& layers,
                        const TrainConfig& cfg) {
  const std::vector<std::string> all = net.layer_names();
  std::vector<std::string> selected;
  if (layers.empty()) {
    selected = all;
  } else {
    for (const auto& l : layers)
      if (std::find(all.begin(), all.end(), l) == all.end()) throw ProbeError("unknown layer '" + l + "'");
    for (const auto& l : all)
      if (std::find(layers.begin(), layers.end(), l) != layers.end()) selected.push_back(l);
  }

  VarianceProfile prof;
  prof.model_id = "skipblocknet-micro";
  prof.dataset_id = ds.name + ":" + ds.split;
  prof.loss_id = loss_kind_name(cfg.loss.kind);
  for (const auto& l : selected) prof.rows.push_back(LayerProbe{l});

  BatchOptions opts;
  opts.batch_size = cfg.eval_batch_size;
  opts.normalize = normalization_for(ds.name);
  BatchStream stream(ds, opts);
  while (auto batch = stream.next()) {
    Graph<float> g;
    const NodeId in = g.input("images");
    g.set_value(in, std::move(batch->images));
    const ModelOutputs out = net.build(g, in, Mode::Eval, nullptr, false);
    g.forward(out.logits);
    for (LayerProbe& row : prof.rows) {
      const auto it = std::find_if(out.probes.begin(), out.probes.end(),
                                   [&](const auto& p) { return p.first == row.layer; });
      for (double v : batch_variances(g.value(it->second))) row.add(v);
    }
  }
  return prof;
}

DepthTrend depth_trend(double early_avg, double last_avg) {
  DepthTrend t;
  t.decays = last_avg < early_avg;
  if (early_avg == last_avg) {
    t.ratio = 1.0;
  } else if (last_avg == 0.0) {
    t.ratio = std::numeric_limits<double>::infinity();
  } else {
    t.ratio = early_avg / last_avg;
  }
  return t;
}

DepthTrend depth_trend(const VarianceProfile& profile, const std::string& early_layer,
                       const std::string& last_layer) {
  return depth_trend(profile.row(early_layer).avg(), profile.row(last_layer).avg());
}

std::vector<BiasCurveRow> bias_curve(const std::vector<double>& alphas, const std::vector<double>& betas,
                                     std::size_t samples, const BiasLossConfig& base) {
  if (samples < 2) throw ContractError("bias_curve needs at least 2 samples");
  std::vector<BiasCurveRow> rows;
  for (double a : alphas)
    for (double b : betas) {
      BiasLossConfig cfg = base;
      cfg.alpha = a;
      cfg.beta = b;
      for (std::size_t i = 0; i < samples; ++i) {
        const double v = static_cast<double>(i) / static_cast<double>(samples - 1);
        rows.push_back({a, b, v, bias_weight_raw(v, cfg), bias_weight(v, cfg)});
      }
    }
  return rows;
}

std::string bias_curve_csv(const std::vector<BiasCurveRow>& rows) {
  std::string out = "alpha,beta,v,z_raw,z_clamped\n";
  for (const auto& r : rows)
    out += fmt(r.alpha) + "," + fmt(r.beta) + "," + fmt(r.v) + "," + fmt(r.z_raw) + "," + fmt(r.z_clamped) + "\n";
  return out;
}

}  // namespace biasloss
