#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <string>

#include "biasloss/checkpoint.hpp"
#include "biasloss/config.hpp"
#include "biasloss/errors.hpp"
#include "biasloss/train.hpp"
#include "synthetic.hpp"
#include "test_util.hpp"

using namespace biasloss;
namespace fs = std::filesystem;

namespace {

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 32;
  cfg.eval_batch_size = 50;
  cfg.seed = 3;
  return cfg;
}

const Dataset& synth_train() {
  static const Dataset ds = testutil::synthetic_dataset(160, 1, 1);
  return ds;
}

const Dataset& synth_val() {
  static const Dataset ds = [] {
    Dataset d = testutil::synthetic_dataset(60, 1, 2);
    d.split = "test";
    return d;
  }();
  return ds;
}

std::vector<Parameter<double>> one_param(std::vector<double> v, bool wd = true) {
  Tensor<double> t({v.size()});
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i];
  return {Parameter<double>{"w", t, wd}};
}

}  // namespace

TEST(Config, DefaultsMirrorRecipe) {
  const TrainConfig cfg;
  EXPECT_EQ(cfg.lr0, 0.1);
  EXPECT_EQ(cfg.momentum, 0.9);
  EXPECT_EQ(cfg.weight_decay, 5e-4);
  EXPECT_EQ(cfg.loss.bias.alpha, 0.3);
  EXPECT_EQ(cfg.loss.bias.beta, 0.3);
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, SetGetEveryKey) {
  TrainConfig cfg;
  for (const auto& key : TrainConfig::keys()) {
    const std::string v = cfg.get(key);
    EXPECT_NO_THROW(cfg.set(key, v)) << key;
    EXPECT_EQ(cfg.get(key), v) << key;
    EXPECT_FALSE(TrainConfig::help(key).empty()) << key;
  }
  cfg.set("loss", "bias");
  cfg.set("alpha", "0.5");
  EXPECT_EQ(cfg.loss.kind, LossKind::Bias);
  EXPECT_EQ(cfg.loss.bias.alpha, 0.5);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  TrainConfig cfg;
  EXPECT_THROW(cfg.set("learning_rate", "0.1"), ConfigError);
  EXPECT_THROW(cfg.set("epochs", "-3"), ConfigError);
  EXPECT_THROW(cfg.set("lr0", "fast"), ConfigError);
  EXPECT_THROW(cfg.set("prefetch", "maybe"), ConfigError);
  EXPECT_THROW(cfg.set("loss", "hinge"), ConfigError);
  EXPECT_THROW(TrainConfig::parse("epochs 3\n"), ConfigError);
  cfg.set("schedule", "3:0.5,2:0.5");
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Config, ParseSerializeRoundTrip) {
  const TrainConfig cfg = TrainConfig::parse("# comment\n\nloss = bias\nalpha=0.1\nepochs=7\nschedule=2:0.5,4:0.1\n");
  EXPECT_EQ(cfg.loss.kind, LossKind::Bias);
  EXPECT_EQ(cfg.loss.bias.alpha, 0.1);
  EXPECT_EQ(cfg.epochs, 7u);
  const TrainConfig again = TrainConfig::parse(cfg.serialize());
  EXPECT_EQ(again.serialize(), cfg.serialize());
  EXPECT_EQ(again.hash(), cfg.hash());
}

TEST(Config, HashIgnoresPathsAndRuntimeSwitches) {
  TrainConfig a, b;
  b.data_dir = "/elsewhere";
  b.prefetch = !a.prefetch;
  b.log_wall_time = true;
  EXPECT_EQ(a.hash(), b.hash());
  b.seed = a.seed + 1;
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Schedule, LrAtProductRule) {
  const auto sched = parse_schedule("60:0.2,120:0.2,160:0.2");
  EXPECT_EQ(lr_at(0, 0.1, sched), 0.1);
  EXPECT_EQ(lr_at(59, 0.1, sched), 0.1);
  EXPECT_NEAR(lr_at(60, 0.1, sched), 0.02, 1e-15);
  EXPECT_NEAR(lr_at(159, 0.1, sched), 0.004, 1e-15);
  EXPECT_NEAR(lr_at(160, 0.1, sched), 0.0008, 1e-15);
  for (std::size_t e : {0u, 10u, 1000u}) EXPECT_EQ(lr_at(e, 0.1, {}), 0.1);
}

TEST(Schedule, ScaledForShortRuns) {
  auto epochs_of = [](const std::vector<ScheduleStep>& s) {
    std::vector<std::size_t> e;
    for (const auto& st : s) e.push_back(st.epoch);
    return e;
  };
  EXPECT_EQ(epochs_of(scaled_schedule(200)), (std::vector<std::size_t>{60, 120, 160}));
  EXPECT_EQ(epochs_of(scaled_schedule(10)), (std::vector<std::size_t>{3, 6, 8}));
  EXPECT_EQ(epochs_of(scaled_schedule(5)), (std::vector<std::size_t>{2, 3, 4}));
  const auto one = scaled_schedule(1);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].epoch, 1u);
  EXPECT_NEAR(one[0].multiplier, 0.04, 1e-15);
  TrainConfig cfg;
  cfg.schedule = "none";
  EXPECT_TRUE(cfg.resolved_schedule().empty());
}

TEST(Config, HflipAutoByDataset) {
  TrainConfig cfg;
  EXPECT_FALSE(cfg.resolved_hflip());
  cfg.dataset = "cifar10";
  EXPECT_TRUE(cfg.resolved_hflip());
  cfg.hflip = "false";
  EXPECT_FALSE(cfg.resolved_hflip());
}

TEST(Sgd, PlainGradientDescent) {
  auto p = one_param({1.0, -2.0});
  Tensor<double> g({2});
  g[0] = 0.5;
  g[1] = 4.0;
  std::vector<Tensor<double>> buf;
  sgd_step<double>(p, {&g}, buf, 0.1, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(p[0].value[0], 0.95);
  EXPECT_DOUBLE_EQ(p[0].value[1], -2.4);
}

TEST(Sgd, MomentumMovesByGThenOnePointNineG) {
  auto p = one_param({0.0});
  Tensor<double> g({1}, 1.0);
  std::vector<Tensor<double>> buf;
  sgd_step<double>(p, {&g}, buf, 1.0, 0.9, 0.0);
  EXPECT_DOUBLE_EQ(p[0].value[0], -1.0);
  sgd_step<double>(p, {&g}, buf, 1.0, 0.9, 0.0);
  EXPECT_DOUBLE_EQ(p[0].value[0], -2.9);
}

TEST(Sgd, DecayOnlyAndBatchnormExcluded) {
  auto p = one_param({2.0, -1.0});
  auto bn = one_param({2.0, -1.0}, false);
  p.push_back(bn[0]);
  std::vector<Tensor<double>> buf;
  sgd_step<double>(p, {nullptr, nullptr}, buf, 1.0, 0.0, 0.1);
  EXPECT_DOUBLE_EQ(p[0].value[0], 1.8);
  EXPECT_DOUBLE_EQ(p[0].value[1], -0.9);
  EXPECT_EQ(p[1].value[0], 2.0);
  EXPECT_EQ(p[1].value[1], -1.0);
}

TEST(Sgd, ShapeMismatchIsContractError) {
  auto p = one_param({1.0, 2.0});
  Tensor<double> g({3}, 1.0);
  std::vector<Tensor<double>> buf;
  EXPECT_THROW(sgd_step<double>(p, {&g}, buf, 0.1, 0.0, 0.0), ContractError);
  EXPECT_THROW(sgd_step<double>(p, {}, buf, 0.1, 0.0, 0.0), ContractError);
}

TEST(Checkpoint, EncodeDecodeByteIdentical) {
  const MicroNet<float> net(TrainConfig{}.model_spec(), 5);
  const Checkpoint ck = checkpoint_from_model(net, 0x1234abcdULL);
  const auto bytes = ck.encode();
  ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "BLCK");
  const Checkpoint back = Checkpoint::decode(bytes);
  EXPECT_EQ(back.config_hash, 0x1234abcdULL);
  EXPECT_EQ(back.encode(), bytes);

  MicroNet<float> other(TrainConfig{}.model_spec(), 6);
  load_into_model(back, other);
  EXPECT_EQ(checkpoint_from_model(other, 0x1234abcdULL).encode(), bytes);
}

TEST(Checkpoint, SaveLoadSaveByteIdentical) {
  const fs::path dir = fs::temp_directory_path() / "biasloss_test_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const MicroNet<float> net(TrainConfig{}.model_spec(), 1);
  checkpoint_from_model(net, 7).save(dir / "a.ckpt");
  Checkpoint::load(dir / "a.ckpt").save(dir / "b.ckpt");
  EXPECT_EQ(read_file(dir / "a.ckpt"), read_file(dir / "b.ckpt"));
  fs::remove_all(dir);
}

TEST(Checkpoint, CorruptionIsCheckpointError) {
  const MicroNet<float> net(TrainConfig{}.model_spec(), 1);
  const auto bytes = checkpoint_from_model(net, 7).encode();
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(Checkpoint::decode(bad), CheckpointError);
  auto cut = bytes;
  cut.resize(bytes.size() - 4);
  EXPECT_THROW(Checkpoint::decode(cut), CheckpointError);
  auto version = bytes;
  version[4] = 9;
  EXPECT_THROW(Checkpoint::decode(version), CheckpointError);
  EXPECT_THROW(Checkpoint::load("/nonexistent/biasloss.ckpt"), CheckpointError);
}

TEST(Checkpoint, ShapeMismatchIsCheckpointError) {
  TrainConfig wide;
  wide.width_multiplier = 2.0;
  const MicroNet<float> big(wide.model_spec(), 1);
  MicroNet<float> net(TrainConfig{}.model_spec(), 1);
  EXPECT_THROW(load_into_model(checkpoint_from_model(big, 0), net), CheckpointError);
  TrainConfig cifar;
  cifar.dataset = "cifar10";
  EXPECT_THROW(evaluate(checkpoint_from_model(net, TrainConfig{}.hash()), synth_val(), cifar), CheckpointError);
}

TEST(RunLog, CsvRoundTrip) {
  RunLog log;
  log.rows.push_back({0, "train", 2.302585092994046, 0.1, 0.1, 0.25, 0.5, 1.0, 0.0, 0.125, 0.0});
  log.rows.push_back({0, "val", 1.0 / 3.0, 0.5, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0});
  const std::string csv = log.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), RunLog::kHeader);
  const RunLog back = RunLog::parse_csv(csv);
  ASSERT_EQ(back.rows.size(), 2u);
  EXPECT_EQ(back.rows[1].loss, 1.0 / 3.0);
  EXPECT_EQ(back.to_csv(), csv);
  EXPECT_THROW(RunLog::parse_csv("epoch,split\n"), FormatError);
}

TEST(Train, RowsPerEpochAndRanges) {
  TrainConfig cfg = small_config();
  cfg.loss.kind = LossKind::Bias;
  const TrainResult r = train_run(cfg, synth_train(), synth_val());
  ASSERT_EQ(r.log.rows.size(), 2 * cfg.epochs);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    EXPECT_EQ(r.log.rows[2 * e].split, "train");
    EXPECT_EQ(r.log.rows[2 * e + 1].split, "val");
  }
  for (const auto& row : r.log.rows) {
    EXPECT_GE(row.top1, 0.0);
    EXPECT_LE(row.top1, 1.0);
    EXPECT_GE(row.mean_weight, 0.5);
    EXPECT_LE(row.mean_weight, 1.5);
    EXPECT_GE(row.frac_clamped_lo, 0.0);
    EXPECT_LE(row.frac_clamped_hi, 1.0);
    EXPECT_EQ(row.wall_seconds, 0.0);
    EXPECT_TRUE(std::isfinite(row.loss));
  }
}

TEST(Train, DeterministicAcrossRunsAndPrefetch) {
  TrainConfig cfg = small_config();
  cfg.loss.kind = LossKind::Bias;
  cfg.prefetch = false;
  const TrainResult a = train_run(cfg, synth_train(), synth_val());
  cfg.prefetch = true;
  const TrainResult b = train_run(cfg, synth_train(), synth_val());
  EXPECT_EQ(a.log.to_csv(), b.log.to_csv());
  EXPECT_EQ(a.final.encode(), b.final.encode());
  EXPECT_EQ(a.best.encode(), b.best.encode());
}

TEST(Train, BiasWithZeroAlphaBetaMatchesCrossEntropy) {
  TrainConfig ce = small_config();
  TrainConfig bias = ce;
  bias.loss.kind = LossKind::Bias;
  bias.loss.bias.alpha = 0.0;
  bias.loss.bias.beta = 0.0;
  const TrainResult a = train_run(ce, synth_train(), synth_val());
  const TrainResult b = train_run(bias, synth_train(), synth_val());
  EXPECT_EQ(a.log.to_csv(), b.log.to_csv());
  EXPECT_EQ(a.final.entries.size(), b.final.entries.size());
  for (std::size_t i = 0; i < a.final.entries.size(); ++i) EXPECT_EQ(a.final.entries[i].bytes, b.final.entries[i].bytes);
}

TEST(Train, EvaluateMatchesFinalValRow) {
  const TrainConfig cfg = small_config();
  const TrainResult r = train_run(cfg, synth_train(), synth_val());
  const EvalResult ev = evaluate(r.final, synth_val(), cfg);
  EXPECT_EQ(ev.loss, r.log.rows.back().loss);
  EXPECT_EQ(ev.top1, r.log.rows.back().top1);
  EXPECT_EQ(ev.count, synth_val().size());
  MicroNet<float> net = model_from_checkpoint(r.final, cfg);
  EXPECT_EQ(evaluate(net, synth_val(), cfg).loss, ev.loss);
}

TEST(Train, BestCheckpointIsHighestValTop1) {
  TrainConfig cfg = small_config();
  cfg.epochs = 3;
  const TrainResult r = train_run(cfg, synth_train(), synth_val());
  double best = -1.0;
  std::size_t best_epoch = 0;
  for (const auto& row : r.log.rows)
    if (row.split == "val" && row.top1 > best) best = row.top1, best_epoch = row.epoch;
  EXPECT_EQ(r.best_epoch, best_epoch);
  EXPECT_EQ(r.best_top1, best);
  EXPECT_EQ(evaluate(r.best, synth_val(), cfg).top1, best);
}

TEST(Train, LossDecreasesWithinOneEpoch) {
  TrainConfig cfg = small_config();
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.schedule = "none";
  cfg.rotate_deg = 0.0;
  if (!fs::is_directory(cfg.resolved_data_dir() / "mnist")) GTEST_SKIP() << "MNIST not found";
  const Dataset slice = load_dataset(cfg.resolved_data_dir(), "mnist", "train").head(64);
  std::vector<double> losses;
  TrainCallbacks cb;
  cb.on_batch = [&](std::size_t, std::size_t, double loss) { losses.push_back(loss); };
  const TrainResult r = train_run(cfg, slice, synth_val(), cb);
  ASSERT_EQ(losses.size(), 8u);
  const double end = evaluate(r.final, slice, cfg).loss;
  EXPECT_LT(end, losses.front());
}

TEST(Train, RandomInitIsAtChance) {
  TrainConfig cfg;
  const Dataset ds = testutil::synthetic_dataset(1000, 1, 5);
  MicroNet<float> net(cfg.model_spec(), 11);
  const EvalResult ev = evaluate(net, ds, cfg);
  EXPECT_EQ(ev.count, 1000u);
  EXPECT_NEAR(ev.top1, 0.1, 0.05);
}

TEST(Train, EvalIsDropoutFree) {
  TrainConfig cfg;
  cfg.dropout = 0.9;
  MicroNet<float> net(cfg.model_spec(), 2);
  const EvalResult a = evaluate(net, synth_val(), cfg);
  const EvalResult b = evaluate(net, synth_val(), cfg);
  EXPECT_EQ(a.loss, b.loss);
  cfg.dropout = 0.0;
  MicroNet<float> same(cfg.model_spec(), 2);
  EXPECT_EQ(evaluate(same, synth_val(), cfg).loss, a.loss);
}

TEST(Train, NonFiniteLossAborts) {
  TrainConfig cfg = small_config();
  cfg.lr0 = 1e30;
  cfg.epochs = 3;
  EXPECT_THROW(train_run(cfg, synth_train(), synth_val()), NumericalError);
}

TEST(Train, StatsConfigUsesUnitWeightsForCrossEntropy) {
  TrainConfig cfg;
  cfg.loss.kind = LossKind::CrossEntropy;
  EXPECT_EQ(stats_config(cfg).alpha, 0.0);
  EXPECT_EQ(stats_config(cfg).beta, 0.0);
  cfg.loss.kind = LossKind::Bias;
  cfg.loss.bias.alpha = 0.7;
  EXPECT_EQ(stats_config(cfg).alpha, 0.7);
}

TEST(Train, GeometryMismatchRejected) {
  TrainConfig cfg = small_config();
  cfg.dataset = "cifar10";
  EXPECT_THROW(train_run(cfg, synth_train(), synth_val()), ConfigError);
}

TEST(Train, WriteRunProducesFiles) {
  const fs::path dir = fs::temp_directory_path() / "biasloss_test_run";
  fs::remove_all(dir);
  TrainConfig cfg = small_config();
  cfg.epochs = 1;
  const TrainResult r = train_run(cfg, synth_train(), synth_val());
  write_run(r, cfg, dir);
  for (const char* f : {"runlog.csv", "best.ckpt", "final.ckpt", "config.cfg"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_EQ(RunLog::load(dir / "runlog.csv").to_csv(), r.log.to_csv());
  EXPECT_EQ(TrainConfig::load(dir / "config.cfg").hash(), cfg.hash());
  EXPECT_EQ(Checkpoint::load(dir / "final.ckpt").encode(), r.final.encode());
  fs::remove_all(dir);
}
