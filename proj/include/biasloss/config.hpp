#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "biasloss/losses.hpp"
#include "biasloss/micronet.hpp"

namespace biasloss {

struct ScheduleStep {
  std::size_t epoch = 0;
  double multiplier = 1.0;
};

/// Everything that defines a training run. Every field is addressable by a
/// string key so config files and command-line flags share one vocabulary.
struct TrainConfig {
  std::string dataset = "mnist";
  std::string data_dir;        // empty: $DATA_DIR, else the build-time default
  std::size_t train_limit = 0;  // 0 keeps the whole split
  std::size_t test_limit = 0;

  LossSpec loss;

  std::size_t epochs = 5;
  std::size_t batch_size = 64;
  std::size_t eval_batch_size = 500;
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// "auto" (decay x0.2 at 30/60/80% of epochs), "none", or "e:m,e:m,...".
  std::string schedule = "auto";
  std::uint64_t seed = 1;

  double width_multiplier = 1.0;
  double dropout = 0.2;
  bool use_se = false;

  /// "auto" flips CIFAR-10 but not MNIST; otherwise "true"/"false".
  std::string hflip = "auto";
  double rotate_deg = 15.0;

  bool prefetch = true;
  bool log_wall_time = false;

  /// Sets one key from its text form; throws ConfigError on unknown keys or
  /// malformed values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();
  static std::string help(const std::string& key);

  void validate() const;
  std::vector<ScheduleStep> resolved_schedule() const;
  bool resolved_hflip() const;
  std::filesystem::path resolved_data_dir() const;
  MicroNetSpec model_spec() const;

  /// key=value lines in keys() order.
  std::string serialize() const;
  /// FNV-1a over the keys that affect results (paths and runtime switches
  /// such as prefetch are excluded).
  std::uint64_t hash() const;

  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
};

/// lr0 times every multiplier whose epoch is <= the given epoch.
double lr_at(std::size_t epoch, double lr0, const std::vector<ScheduleStep>& schedule);
double lr_at(std::size_t epoch, const TrainConfig& cfg);

std::vector<ScheduleStep> parse_schedule(const std::string& text);
/// Decay points at round(0.3 E), round(0.6 E), round(0.8 E), each x0.2;
/// coinciding points are merged and points at epoch 0 are dropped.
std::vector<ScheduleStep> scaled_schedule(std::size_t epochs);

std::uint64_t fnv1a64(const std::string& text);

struct DatasetGeometry {
  std::size_t channels;
  std::size_t side;
  std::size_t num_classes;
};
DatasetGeometry dataset_geometry(const std::string& dataset);

}  // namespace biasloss
