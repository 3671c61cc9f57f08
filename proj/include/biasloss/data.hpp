#pragma once

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <exception>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "biasloss/tensor.hpp"

namespace biasloss {

/// Images scaled to [0, 1] with integer class labels.
struct Dataset {
  Tensor<float> images;  // [N, c, h, w]
  std::vector<int> labels;
  std::string name;
  std::string split;
  std::size_t num_classes = 10;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  /// Checks pixel range, label range and shape agreement.
  void validate() const;
  /// First n samples.
  Dataset head(std::size_t n) const;
  /// Samples [begin, end).
  Dataset slice(std::size_t begin, std::size_t end) const;
  /// One sample as [c, h, w].
  Tensor<float> image(std::size_t i) const;
};

// IDX files: big-endian magic 0x00000803 (u8 images, N x H x W) or 0x00000801
// (u8 labels, N), then the raw bytes.
Tensor<float> decode_idx_images(std::span<const std::uint8_t> bytes);
std::vector<int> decode_idx_labels(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_idx_images(const Tensor<float>& images);
std::vector<std::uint8_t> encode_idx_labels(std::span<const int> labels);

Tensor<float> read_idx_images(const std::filesystem::path& path);
std::vector<int> read_idx_labels(const std::filesystem::path& path);
void write_idx_images(const std::filesystem::path& path, const Tensor<float>& images);
void write_idx_labels(const std::filesystem::path& path, std::span<const int> labels);

// CIFAR-10 binary: 3073-byte records, one label byte then R, G, B planes of
// 32 x 32 row-major pixels.
struct LabeledImages {
  Tensor<float> images;
  std::vector<int> labels;
};

LabeledImages decode_cifar10(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_cifar10(const LabeledImages& data);
LabeledImages read_cifar10(const std::filesystem::path& path);
void write_cifar10(const std::filesystem::path& path, const LabeledImages& data);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// <root>/mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte
Dataset load_mnist(const std::filesystem::path& root, const std::string& split);
/// <root>/cifar-10-batches-bin/{data_batch_1..5,test_batch}.bin; limit keeps
/// the first samples in file order (0 keeps all).
Dataset load_cifar10(const std::filesystem::path& root, const std::string& split, std::size_t limit = 0);
/// Dispatches on "mnist" or "cifar10".
Dataset load_dataset(const std::filesystem::path& root, const std::string& name, const std::string& split,
                     std::size_t limit = 0);

struct Normalization {
  std::vector<double> mean;
  std::vector<double> std;
};

Normalization mnist_normalization();
Normalization cifar10_normalization();
Normalization normalization_for(const std::string& dataset);

struct AugmentSpec {
  bool hflip = true;
  double rotate_lo = -15.0;
  double rotate_hi = 15.0;
  Normalization normalize;
};

Tensor<float> hflip(const Tensor<float>& image);
/// Counter-clockwise rotation about the image center, bilinear, zero fill.
Tensor<float> rotate(const Tensor<float>& image, double degrees);
Tensor<float> normalize(const Tensor<float>& image, const Normalization& norm);

/// Random flip and rotation followed by normalization. The draws depend only
/// on (seed, epoch, index).
Tensor<float> augment(const Tensor<float>& image, const AugmentSpec& spec, std::uint64_t seed, std::uint64_t epoch,
                      std::uint64_t index);

/// Fisher-Yates permutation keyed by (seed, epoch).
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

struct Batch {
  Tensor<float> images;  // [b, c, h, w], normalized
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};

struct BatchOptions {
  std::size_t batch_size = 128;
  bool shuffle = false;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  /// Training augmentation; when absent images are only normalized.
  std::optional<AugmentSpec> augment;
  Normalization normalize;
  /// Build batches on one background thread, at most 4 ahead.
  bool prefetch = false;
};

/// Batch k of an epoch is a pure function of (dataset, options, k), so the
/// stream is identical with and without prefetch.
Batch make_batch(const Dataset& ds, const BatchOptions& opts, std::span<const std::size_t> order, std::size_t k);

class BatchStream {
 public:
  BatchStream(const Dataset& ds, BatchOptions opts);
  ~BatchStream();
  BatchStream(const BatchStream&) = delete;
  BatchStream& operator=(const BatchStream&) = delete;

  std::size_t num_batches() const { return num_batches_; }
  std::optional<Batch> next();

  static constexpr std::size_t kQueueDepth = 4;

 private:
  void worker();

  const Dataset* ds_;
  BatchOptions opts_;
  std::vector<std::size_t> order_;
  std::size_t num_batches_ = 0;
  std::size_t next_ = 0;

  std::thread thread_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Batch> queue_;
  std::exception_ptr error_;
  bool stop_ = false;
  std::size_t produced_ = 0;
};

}  // namespace biasloss
