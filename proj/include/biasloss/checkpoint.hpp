#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "biasloss/micronet.hpp"
#include "biasloss/tensor.hpp"

namespace biasloss {

struct CheckpointEntry {
  std::string name;
  Shape shape;
  DType dtype = DType::F32;
  std::vector<std::uint8_t> bytes;  // little-endian scalars
};

/// Binary layout: "BLCK", u32 version, u64 manifest length, manifest, blob.
/// The manifest starts with a "config_hash <16 hex digits>" line followed by
/// one "name dims... dtype offset" line per entry; offsets index the blob.
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  std::uint64_t config_hash = 0;
  std::vector<CheckpointEntry> entries;

  template <typename T>
  void put(const std::string& name, const Tensor<T>& value);
  template <typename T>
  Tensor<T> get(const std::string& name) const;
  const CheckpointEntry* find(const std::string& name) const;

  std::vector<std::uint8_t> encode() const;
  static Checkpoint decode(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

/// Parameters followed by batchnorm running statistics, in store order.
template <typename T>
Checkpoint checkpoint_from_model(const MicroNet<T>& net, std::uint64_t config_hash);

/// Requires exactly the model's entries with matching shapes and dtype.
template <typename T>
void load_into_model(const Checkpoint& ckpt, MicroNet<T>& net);

}  // namespace biasloss
