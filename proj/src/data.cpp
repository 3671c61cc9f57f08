#include "biasloss/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "biasloss/errors.hpp"
#include "biasloss/rng.hpp"

namespace biasloss {

namespace fs = std::filesystem;

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;
constexpr std::size_t kCifarRecord = 1 + kCifarPixels;

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

void push_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint8_t to_byte(float v) {
  if (!(v >= 0.0f && v <= 1.0f)) throw FormatError("pixel value " + std::to_string(v) + " outside [0, 1]");
  return static_cast<std::uint8_t>(std::lround(static_cast<double>(v) * 255.0));
}

float from_byte(std::uint8_t b) { return static_cast<float>(b) / 255.0f; }

// Header of an IDX file whose magic must equal `magic`; returns the dims.
std::vector<std::size_t> idx_header(std::span<const std::uint8_t> bytes, std::uint32_t magic) {
  if (bytes.size() < 4) throw IoError("IDX data truncated before magic");
  const std::uint32_t got = read_be32(bytes, 0);
  if (got != magic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "IDX magic 0x%08x, expected 0x%08x", got, magic);
    throw FormatError(buf);
  }
  const std::size_t ndims = magic & 0xff;
  if (bytes.size() < 4 + 4 * ndims) throw IoError("IDX data truncated inside header");
  std::vector<std::size_t> dims(ndims);
  std::size_t total = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    dims[i] = read_be32(bytes, 4 + 4 * i);
    total *= dims[i];
  }
  const std::size_t have = bytes.size() - 4 - 4 * ndims;
  if (have < total)
    throw IoError("IDX payload truncated: " + std::to_string(have) + " of " + std::to_string(total) + " bytes");
  if (have > total) throw FormatError("IDX payload has " + std::to_string(have - total) + " trailing bytes");
  return dims;
}

}  // namespace

void Dataset::validate() const {
  if (images.rank() != 4) throw ShapeError("dataset images must be rank 4, got " + shape_str(images.shape()));
  if (images.dim(0) != labels.size())
    throw ShapeError("dataset has " + std::to_string(images.dim(0)) + " images but " +
                     std::to_string(labels.size()) + " labels");
  for (float v : images.data())
    if (!(v >= 0.0f && v <= 1.0f)) throw FormatError("dataset pixel outside [0, 1]");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes)
      throw FormatError("label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
}

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  end = std::min(end, size());
  begin = std::min(begin, end);
  const std::size_t per = size() == 0 ? 0 : images.size() / size();
  Dataset out;
  out.images = Tensor<float>({end - begin, channels(), height(), width()},
                             std::vector<float>(images.data().begin() + begin * per,
                                                images.data().begin() + end * per));
  out.labels.assign(labels.begin() + begin, labels.begin() + end);
  out.name = name;
  out.split = split;
  out.num_classes = num_classes;
  return out;
}

Dataset Dataset::head(std::size_t n) const { return slice(0, n); }

Tensor<float> Dataset::image(std::size_t i) const {
  if (i >= size()) throw ContractError("sample index " + std::to_string(i) + " out of range");
  const std::size_t per = images.size() / size();
  return Tensor<float>({channels(), height(), width()},
                       std::vector<float>(images.data().begin() + i * per, images.data().begin() + (i + 1) * per));
}

Tensor<float> decode_idx_images(std::span<const std::uint8_t> bytes) {
  const auto dims = idx_header(bytes, kIdxImagesMagic);
  const std::uint8_t* px = bytes.data() + 16;
  Tensor<float> out({dims[0], 1, dims[1], dims[2]}, 0.0f);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = from_byte(px[i]);
  return out;
}

std::vector<int> decode_idx_labels(std::span<const std::uint8_t> bytes) {
  const auto dims = idx_header(bytes, kIdxLabelsMagic);
  return std::vector<int>(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(dims[0]));
}

std::vector<std::uint8_t> encode_idx_images(const Tensor<float>& images) {
  if (images.rank() != 4 || images.dim(1) != 1)
    throw ShapeError("IDX images must be [N, 1, H, W], got " + shape_str(images.shape()));
  std::vector<std::uint8_t> out;
  out.reserve(16 + images.size());
  push_be32(out, kIdxImagesMagic);
  push_be32(out, static_cast<std::uint32_t>(images.dim(0)));
  push_be32(out, static_cast<std::uint32_t>(images.dim(2)));
  push_be32(out, static_cast<std::uint32_t>(images.dim(3)));
  for (float v : images.data()) out.push_back(to_byte(v));
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const int> labels) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + labels.size());
  push_be32(out, kIdxLabelsMagic);
  push_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) {
    if (l < 0 || l > 255) throw FormatError("label " + std::to_string(l) + " does not fit a byte");
    out.push_back(static_cast<std::uint8_t>(l));
  }
  return out;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Tensor<float> read_idx_images(const fs::path& path) { return decode_idx_images(read_file(path)); }
std::vector<int> read_idx_labels(const fs::path& path) { return decode_idx_labels(read_file(path)); }
void write_idx_images(const fs::path& path, const Tensor<float>& images) {
  write_file(path, encode_idx_images(images));
}
void write_idx_labels(const fs::path& path, std::span<const int> labels) {
  write_file(path, encode_idx_labels(labels));
}

LabeledImages decode_cifar10(std::span<const std::uint8_t> bytes) {
  if (bytes.empty() || bytes.size() % kCifarRecord != 0)
    throw FormatError("CIFAR-10 data size " + std::to_string(bytes.size()) + " is not a multiple of 3073");
  const std::size_t n = bytes.size() / kCifarRecord;
  LabeledImages out{Tensor<float>({n, 3, kCifarSide, kCifarSide}, 0.0f), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kCifarRecord;
    if (rec[0] > 9) throw FormatError("CIFAR-10 label " + std::to_string(rec[0]) + " in record " + std::to_string(i));
    out.labels[i] = rec[0];
    float* dst = out.images.ptr() + i * kCifarPixels;
    for (std::size_t k = 0; k < kCifarPixels; ++k) dst[k] = from_byte(rec[1 + k]);
  }
  return out;
}

std::vector<std::uint8_t> encode_cifar10(const LabeledImages& data) {
  const Tensor<float>& im = data.images;
  if (im.rank() != 4 || im.dim(1) != 3 || im.dim(2) != kCifarSide || im.dim(3) != kCifarSide)
    throw ShapeError("CIFAR-10 images must be [N, 3, 32, 32], got " + shape_str(im.shape()));
  if (im.dim(0) != data.labels.size()) throw ShapeError("CIFAR-10 image and label counts differ");
  std::vector<std::uint8_t> out;
  out.reserve(data.labels.size() * kCifarRecord);
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    const int l = data.labels[i];
    if (l < 0 || l > 9) throw FormatError("CIFAR-10 label " + std::to_string(l) + " outside [0, 9]");
    out.push_back(static_cast<std::uint8_t>(l));
    const float* src = im.ptr() + i * kCifarPixels;
    for (std::size_t k = 0; k < kCifarPixels; ++k) out.push_back(to_byte(src[k]));
  }
  return out;
}

LabeledImages read_cifar10(const fs::path& path) { return decode_cifar10(read_file(path)); }
void write_cifar10(const fs::path& path, const LabeledImages& data) { write_file(path, encode_cifar10(data)); }

Dataset load_mnist(const fs::path& root, const std::string& split) {
  std::string prefix;
  if (split == "train") {
    prefix = "train";
  } else if (split == "test") {
    prefix = "t10k";
  } else {
    throw ConfigError("unknown split '" + split + "'");
  }
  const fs::path dir = root / "mnist";
  if (!fs::is_directory(dir)) throw IoError("MNIST directory not found: " + dir.string());
  Dataset ds;
  ds.images = read_idx_images(dir / (prefix + "-images-idx3-ubyte"));
  ds.labels = read_idx_labels(dir / (prefix + "-labels-idx1-ubyte"));
  ds.name = "mnist";
  ds.split = split;
  if (ds.images.dim(0) != ds.labels.size()) throw FormatError("MNIST image and label counts differ");
  return ds;
}

Dataset load_cifar10(const fs::path& root, const std::string& split, std::size_t limit) {
  std::vector<std::string> files;
  if (split == "train") {
    for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
  } else if (split == "test") {
    files.push_back("test_batch.bin");
  } else {
    throw ConfigError("unknown split '" + split + "'");
  }
  const fs::path dir = root / "cifar-10-batches-bin";
  if (!fs::is_directory(dir)) throw IoError("CIFAR-10 directory not found: " + dir.string());
  std::vector<float> pixels;
  std::vector<int> labels;
  for (const auto& f : files) {
    if (limit != 0 && labels.size() >= limit) break;
    LabeledImages part = read_cifar10(dir / f);
    pixels.insert(pixels.end(), part.images.data().begin(), part.images.data().end());
    labels.insert(labels.end(), part.labels.begin(), part.labels.end());
  }
  if (limit != 0 && labels.size() > limit) {
    labels.resize(limit);
    pixels.resize(limit * kCifarPixels);
  }
  Dataset ds;
  const std::size_t n = labels.size();
  ds.images = Tensor<float>({n, 3, kCifarSide, kCifarSide}, std::move(pixels));
  ds.labels = std::move(labels);
  ds.name = "cifar10";
  ds.split = split;
  return ds;
}

Dataset load_dataset(const fs::path& root, const std::string& name, const std::string& split, std::size_t limit) {
  if (name == "mnist") {
    Dataset ds = load_mnist(root, split);
    return limit != 0 && limit < ds.size() ? ds.head(limit) : ds;
  }
  if (name == "cifar10") return load_cifar10(root, split, limit);
  throw ConfigError("unknown dataset '" + name + "'");
}

Normalization mnist_normalization() { return {{0.1307}, {0.3081}}; }

Normalization cifar10_normalization() {
  return {{0.49139968, 0.48215841, 0.44653091}, {0.24703223, 0.24348513, 0.26158784}};
}

Normalization normalization_for(const std::string& dataset) {
  if (dataset == "mnist") return mnist_normalization();
  if (dataset == "cifar10") return cifar10_normalization();
  throw ConfigError("no normalization constants for dataset '" + dataset + "'");
}

Tensor<float> hflip(const Tensor<float>& image) {
  if (image.rank() != 3) throw ShapeError("hflip expects [c, h, w], got " + shape_str(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor<float> out(image.shape(), 0.0f);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y) {
      const float* src = image.ptr() + (ch * h + y) * w;
      float* dst = out.ptr() + (ch * h + y) * w;
      for (std::size_t x = 0; x < w; ++x) dst[x] = src[w - 1 - x];
    }
  return out;
}

Tensor<float> rotate(const Tensor<float>& image, double degrees) {
  if (image.rank() != 3) throw ShapeError("rotate expects [c, h, w], got " + shape_str(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cx = (static_cast<double>(w) - 1.0) / 2.0, cy = (static_cast<double>(h) - 1.0) / 2.0;
  Tensor<float> out(image.shape(), 0.0f);
  const long H = static_cast<long>(h), W = static_cast<long>(w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const double sx = cs * dx - sn * dy + cx;
      const double sy = sn * dx + cs * dy + cy;
      const double fx0 = std::floor(sx), fy0 = std::floor(sy);
      const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
      const double ax = sx - fx0, ay = sy - fy0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float* src = image.ptr() + ch * h * w;
        auto at = [&](long yy, long xx) -> double {
          return (yy < 0 || yy >= H || xx < 0 || xx >= W) ? 0.0 : static_cast<double>(src[yy * W + xx]);
        };
        const double top = (1.0 - ax) * at(y0, x0) + ax * at(y0, x0 + 1);
        const double bottom = (1.0 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1);
        out.ptr()[(ch * h + y) * w + x] = static_cast<float>((1.0 - ay) * top + ay * bottom);
      }
    }
  return out;
}

Tensor<float> normalize(const Tensor<float>& image, const Normalization& norm) {
  if (image.rank() != 3) throw ShapeError("normalize expects [c, h, w], got " + shape_str(image.shape()));
  const std::size_t c = image.dim(0), plane = image.dim(1) * image.dim(2);
  if (norm.mean.size() != c || norm.std.size() != c)
    throw ShapeError("normalization has " + std::to_string(norm.mean.size()) + " channels, image has " +
                     std::to_string(c));
  Tensor<float> out(image.shape(), 0.0f);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float m = static_cast<float>(norm.mean[ch]);
    const float s = static_cast<float>(norm.std[ch]);
    for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] = (image[ch * plane + i] - m) / s;
  }
  return out;
}

Tensor<float> augment(const Tensor<float>& image, const AugmentSpec& spec, std::uint64_t seed, std::uint64_t epoch,
                      std::uint64_t index) {
  CounterRng rng(seed, RngDomain::Augment, stream_id(epoch, index));
  const double flip_draw = rng.uniform();
  const double angle = rng.uniform(spec.rotate_lo, spec.rotate_hi);
  Tensor<float> x = spec.hflip && flip_draw < 0.5 ? hflip(image) : image;
  if (spec.rotate_lo != 0.0 || spec.rotate_hi != 0.0) x = rotate(x, angle);
  return normalize(x, spec.normalize);
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  CounterRng rng(seed, RngDomain::Shuffle, epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

Batch make_batch(const Dataset& ds, const BatchOptions& opts, std::span<const std::size_t> order, std::size_t k) {
  const std::size_t begin = k * opts.batch_size;
  const std::size_t end = std::min(order.size(), begin + opts.batch_size);
  if (begin >= end) throw ContractError("batch index " + std::to_string(k) + " out of range");
  const std::size_t c = ds.channels(), h = ds.height(), w = ds.width(), per = c * h * w;
  Batch b;
  b.images = Tensor<float>({end - begin, c, h, w}, 0.0f);
  for (std::size_t i = begin; i < end; ++i) {
    const std::size_t idx = order[i];
    const Tensor<float> src = ds.image(idx);
    const Tensor<float> x = opts.augment ? augment(src, *opts.augment, opts.seed, opts.epoch, idx)
                                         : normalize(src, opts.normalize);
    std::copy(x.data().begin(), x.data().end(), b.images.ptr() + (i - begin) * per);
    b.labels.push_back(ds.labels[idx]);
    b.indices.push_back(idx);
  }
  return b;
}

BatchStream::BatchStream(const Dataset& ds, BatchOptions opts) : ds_(&ds), opts_(std::move(opts)) {
  if (opts_.batch_size == 0) throw ContractError("batch_size must be at least 1");
  if (opts_.shuffle) {
    order_ = epoch_permutation(ds.size(), opts_.seed, opts_.epoch);
  } else {
    order_.resize(ds.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  }
  num_batches_ = (ds.size() + opts_.batch_size - 1) / opts_.batch_size;
  if (opts_.prefetch && num_batches_ > 0) thread_ = std::thread(&BatchStream::worker, this);
}

BatchStream::~BatchStream() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  if (thread_.joinable()) thread_.join();
}

void BatchStream::worker() {
  try {
    for (std::size_t k = 0; k < num_batches_; ++k) {
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] { return stop_ || queue_.size() < kQueueDepth; });
        if (stop_) return;
      }
      Batch b = make_batch(*ds_, opts_, order_, k);
      {
        std::lock_guard<std::mutex> lock(mu_);
        queue_.push_back(std::move(b));
        ++produced_;
      }
      cv_.notify_all();
    }
  } catch (...) {
    std::lock_guard<std::mutex> lock(mu_);
    error_ = std::current_exception();
    cv_.notify_all();
  }
}

std::optional<Batch> BatchStream::next() {
  if (next_ >= num_batches_) return std::nullopt;
  if (!opts_.prefetch) return make_batch(*ds_, opts_, order_, next_++);
  std::unique_lock<std::mutex> lock(mu_);
  cv_.wait(lock, [&] { return !queue_.empty() || error_; });
  if (queue_.empty() && error_) std::rethrow_exception(error_);
  Batch b = std::move(queue_.front());
  queue_.pop_front();
  ++next_;
  lock.unlock();
  cv_.notify_all();
  return b;
}

}  // namespace biasloss
