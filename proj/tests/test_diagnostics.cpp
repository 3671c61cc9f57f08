#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "biasloss/diagnostics.hpp"
#include "biasloss/errors.hpp"
#include "biasloss/losses.hpp"
#include "loss_oracle.hpp"
#include "synthetic.hpp"

using namespace biasloss;

namespace {

Dataset permuted(const Dataset& ds, const std::vector<std::size_t>& order) {
  Dataset out = ds;
  const std::size_t m = ds.images.size() / ds.size();
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.labels[i] = ds.labels[order[i]];
    std::copy_n(ds.images.ptr() + order[i] * m, m, out.images.ptr() + i * m);
  }
  return out;
}

const Dataset& probe_data() {
  static const Dataset ds = testutil::synthetic_dataset(50, 1, 9);
  return ds;
}

}  // namespace

TEST(LayerProbe, HandAggregation) {
  LayerProbe p{"x"};
  for (double v : {1.0, 2.0, 3.0}) p.add(v);
  EXPECT_EQ(p.count, 3u);
  EXPECT_DOUBLE_EQ(p.avg(), 2.0);
  EXPECT_EQ(p.max, 3.0);
  EXPECT_EQ(p.min, 1.0);
}

TEST(LayerProbe, MergeIsCountWeighted) {
  LayerProbe a{"x"}, b{"x"}, all{"x"};
  for (double v : {0.5, 4.0}) a.add(v), all.add(v);
  for (double v : {1.0, 1.5, 9.0, 0.25}) b.add(v), all.add(v);
  a.merge(b);
  EXPECT_EQ(a.count, 6u);
  EXPECT_NEAR(a.avg(), all.avg(), 1e-15);
  EXPECT_EQ(a.max, 9.0);
  EXPECT_EQ(a.min, 0.25);
  LayerProbe empty{"x"};
  empty.merge(all);
  EXPECT_EQ(empty.avg(), all.avg());
}

TEST(Profile, MatchesSampleVarianceOfProbedLayer) {
  TrainConfig cfg;
  MicroNet<float> net(cfg.model_spec(), 4);
  const VarianceProfile prof = profile(net, probe_data(), {"head"}, cfg);
  ASSERT_EQ(prof.rows.size(), 1u);
  const LayerProbe& r = prof.row("head");
  EXPECT_EQ(r.count, probe_data().size());
  EXPECT_GE(r.max, r.avg());
  EXPECT_GE(r.avg(), r.min);
  EXPECT_GT(r.min, 0.0);
  EXPECT_EQ(prof.loss_id, "ce");
}

TEST(Profile, RowsFollowNetworkDepth) {
  TrainConfig cfg;
  MicroNet<float> net(cfg.model_spec(), 4);
  const auto names = net.layer_names();
  ASSERT_GE(names.size(), 3u);
  EXPECT_EQ(names.front(), "stem");
  EXPECT_EQ(names.back(), "head");
  const VarianceProfile prof = profile(net, probe_data().head(4), {"head", "stem"}, cfg);
  ASSERT_EQ(prof.rows.size(), 2u);
  EXPECT_EQ(prof.rows[0].layer, "stem");
  EXPECT_EQ(prof.rows[1].layer, "head");
  const VarianceProfile full = profile(net, probe_data().head(4), {}, cfg);
  EXPECT_EQ(full.rows.size(), names.size());
  EXPECT_EQ(prof.to_csv().substr(0, 18), "layer,avg,max,min\n");
}

TEST(Profile, ConstantLayerGivesZeroRow) {
  TrainConfig cfg;
  MicroNet<float> net(cfg.model_spec(), 4);
  auto& store = net.parameters();
  auto& gamma = store.param(*store.find("stem.bn.gamma")).value;
  auto& beta = store.param(*store.find("stem.bn.beta")).value;
  gamma = Tensor<float>(gamma.shape(), 0.0f);
  beta = Tensor<float>(beta.shape(), 0.5f);
  const LayerProbe r = profile(net, probe_data(), {"stem"}, cfg).row("stem");
  EXPECT_EQ(r.avg(), 0.0);
  EXPECT_EQ(r.max, 0.0);
  EXPECT_EQ(r.min, 0.0);
}

TEST(Profile, SplitMergeAndPermutationInvariance) {
  TrainConfig cfg;
  cfg.eval_batch_size = 7;
  MicroNet<float> net(cfg.model_spec(), 8);
  const Dataset& ds = probe_data();
  const VarianceProfile whole = profile(net, ds, {}, cfg);
  const VarianceProfile merged =
      profile(net, ds.slice(0, 19), {}, cfg).merged(profile(net, ds.slice(19, ds.size()), {}, cfg));
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::reverse(order.begin(), order.end());
  std::swap(order[3], order[40]);
  const VarianceProfile shuffled = profile(net, permuted(ds, order), {}, cfg);
  for (std::size_t i = 0; i < whole.rows.size(); ++i) {
    for (const VarianceProfile* other : {&merged, &shuffled}) {
      const LayerProbe& a = whole.rows[i];
      const LayerProbe& b = other->rows[i];
      EXPECT_EQ(a.count, b.count);
      EXPECT_LE(std::abs(a.avg() - b.avg()), 1e-10 * std::abs(a.avg())) << a.layer;
      EXPECT_EQ(a.max, b.max) << a.layer;
      EXPECT_EQ(a.min, b.min) << a.layer;
    }
  }
}

TEST(Profile, UnknownLayerIsProbeError) {
  TrainConfig cfg;
  MicroNet<float> net(cfg.model_spec(), 4);
  EXPECT_THROW(profile(net, probe_data().head(2), {"stem", "block99"}, cfg), ProbeError);
  VarianceProfile p;
  EXPECT_THROW(p.row("stem"), ProbeError);
}

TEST(DepthTrend, PublishedAverages) {
  const DepthTrend sk = depth_trend(1.7, 0.09);
  EXPECT_TRUE(sk.decays);
  EXPECT_NEAR(sk.ratio, 18.9, 0.05);
  EXPECT_TRUE(depth_trend(1.7, 0.05).decays);
  const DepthTrend eq = depth_trend(0.4, 0.4);
  EXPECT_FALSE(eq.decays);
  EXPECT_EQ(eq.ratio, 1.0);
}

TEST(DepthTrend, FromProfile) {
  VarianceProfile p;
  p.rows = {LayerProbe{"stem"}, LayerProbe{"head"}};
  p.rows[0].add(2.0);
  p.rows[1].add(0.5);
  const DepthTrend t = depth_trend(p, "stem", "head");
  EXPECT_TRUE(t.decays);
  EXPECT_EQ(t.ratio, 4.0);
  EXPECT_THROW(depth_trend(p, "stem", "block1"), ProbeError);
}

TEST(BiasCurve, AnchorsAndMonotonicity) {
  const auto rows = bias_curve({0.3, 1.0}, {0.0, 0.3, 0.7}, 11);
  ASSERT_EQ(rows.size(), 2u * 3u * 11u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    EXPECT_GE(r.z_clamped, 0.5);
    EXPECT_LE(r.z_clamped, 1.5);
    EXPECT_EQ(r.z_raw, std::exp(r.alpha * r.v) - r.beta);
    if (r.v == 0.0) EXPECT_EQ(r.z_raw, 1.0 - r.beta);
    if (i % 11 != 0) {
      EXPECT_GT(r.v, rows[i - 1].v);
      EXPECT_GT(r.z_raw, rows[i - 1].z_raw);
    }
  }
  const auto& first = rows[1 * 11];  // alpha 0.3, beta 0.3, v 0
  EXPECT_EQ(first.z_raw, 0.7);
  const auto& top = rows[(3 + 1) * 11 + 10];  // alpha 1, beta 0.3, v 1
  EXPECT_EQ(top.alpha, 1.0);
  EXPECT_EQ(top.v, 1.0);
  EXPECT_NEAR(top.z_raw, 2.41828, 1e-5);
  EXPECT_EQ(top.z_clamped, 1.5);
}

TEST(BiasCurve, Csv) {
  const std::string csv = bias_curve_csv(bias_curve({0.3}, {0.3}, 2));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "alpha,beta,v,z_raw,z_clamped");
  EXPECT_NE(csv.find("\n0.3,0.3,0,0.7,0.7\n"), std::string::npos) << csv;
  EXPECT_THROW(bias_curve({0.3}, {0.3}, 1), ContractError);
}
