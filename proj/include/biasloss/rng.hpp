#pragma once

#include <array>
#include <cstdint>

namespace biasloss {

/// Philox-4x32-10 block function (Salmon et al., "Parallel random numbers:
/// as easy as 1, 2, 3").
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);

/// Independent random streams used by the training pipeline. Each stream is a
/// pure function of (seed, domain, stream id), so values never depend on call
/// order across threads.
enum class RngDomain : std::uint32_t {
  Init = 1,
  Shuffle = 2,
  Augment = 3,
  Dropout = 4,
  Test = 5,
};

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, RngDomain domain, std::uint64_t stream);

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, bound) by rejection (no modulo bias).
  std::uint64_t below(std::uint64_t bound);

 private:
  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_;
  std::array<std::uint32_t, 4> buffer_{};
  unsigned used_ = 4;
};

/// Stream id packing two 32-bit coordinates, e.g. (epoch, sample index).
constexpr std::uint64_t stream_id(std::uint64_t hi, std::uint64_t lo) { return (hi << 32) | (lo & 0xffffffffULL); }

}  // namespace biasloss
