#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "biasloss/checkpoint.hpp"
#include "biasloss/config.hpp"
#include "biasloss/data.hpp"
#include "biasloss/layers.hpp"

namespace biasloss {

/// buf = momentum * buf + g + wd * theta; theta -= lr * buf. Parameters with
/// weight_decay == false skip the wd term. A null gradient counts as zero.
template <typename T>
void sgd_step(std::vector<Parameter<T>>& params, const std::vector<const Tensor<T>*>& grads,
              std::vector<Tensor<T>>& buffers, double lr, double momentum, double weight_decay);

/// Running sums of per-sample variance statistics over an epoch.
struct VarianceStats {
  std::size_t count = 0;
  double raw_sum = 0.0;
  double scaled_sum = 0.0;
  double weight_sum = 0.0;
  std::size_t clamped_lo = 0;
  std::size_t clamped_hi = 0;

  void add(const VarianceRecord& rec, const BiasLossConfig& cfg);
  double mean_raw() const { return count ? raw_sum / static_cast<double>(count) : 0.0; }
  double mean_scaled() const { return count ? scaled_sum / static_cast<double>(count) : 0.0; }
  double mean_weight() const { return count ? weight_sum / static_cast<double>(count) : 0.0; }
  double frac_lo() const { return count ? static_cast<double>(clamped_lo) / static_cast<double>(count) : 0.0; }
  double frac_hi() const { return count ? static_cast<double>(clamped_hi) / static_cast<double>(count) : 0.0; }
};

struct RunLogRow {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double top1 = 0.0;
  double lr = 0.0;
  double mean_raw_variance = 0.0;
  double mean_scaled_variance = 0.0;
  double mean_weight = 0.0;
  double frac_clamped_lo = 0.0;
  double frac_clamped_hi = 0.0;
  double wall_seconds = 0.0;
};

struct RunLog {
  static constexpr const char* kHeader =
      "epoch,split,loss,top1,lr,mean_raw_variance,mean_scaled_variance,mean_weight,frac_clamped_lo,"
      "frac_clamped_hi,wall_seconds";

  std::vector<RunLogRow> rows;

  std::string to_csv() const;
  static RunLog parse_csv(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static RunLog load(const std::filesystem::path& path);
};

/// Config used for variance statistics: the training loss settings for the
/// bias loss, and alpha = beta = 0 (unit weights) otherwise.
BiasLossConfig stats_config(const TrainConfig& cfg);

struct EvalResult {
  double loss = 0.0;
  double top1 = 0.0;
  std::size_t count = 0;
  VarianceStats stats;
};

/// Eval-mode pass without augmentation or dropout, batched by
/// cfg.eval_batch_size, using the configured loss.
EvalResult evaluate(MicroNet<float>& net, const Dataset& ds, const TrainConfig& cfg);
/// Rebuilds the model from cfg and checks the checkpoint's config hash.
EvalResult evaluate(const Checkpoint& ckpt, const Dataset& ds, const TrainConfig& cfg);
MicroNet<float> model_from_checkpoint(const Checkpoint& ckpt, const TrainConfig& cfg);

struct TrainCallbacks {
  std::function<void(std::size_t epoch, std::size_t batch, double loss)> on_batch;
  std::function<void(const RunLogRow&)> on_row;
};

struct TrainResult {
  RunLog log;
  Checkpoint best;
  Checkpoint final;
  std::size_t best_epoch = 0;
  double best_top1 = -1.0;
};

TrainResult train_run(const TrainConfig& cfg, const Dataset& train, const Dataset& val,
                      const TrainCallbacks& callbacks = {});

/// Loads the configured dataset (test split doubles as validation split).
void load_datasets(const TrainConfig& cfg, Dataset& train, Dataset& test);

/// Writes runlog.csv, best.ckpt, final.ckpt and config.cfg into dir.
void write_run(const TrainResult& result, const TrainConfig& cfg, const std::filesystem::path& dir);

}  // namespace biasloss
