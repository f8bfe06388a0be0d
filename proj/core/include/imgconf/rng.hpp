#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace imgconf {

// Philox4x32-10 counter-based generator.
//
// A generator is identified by a 64-bit key and a 64-bit stream id; the
// remaining 64 bits of the 128-bit counter enumerate blocks within the
// stream. Two generators with different (key, stream) never overlap, so
// per-scene and per-replicate streams can be created in any order.
class Philox {
 public:
  using result_type = std::uint64_t;

  Philox(std::uint64_t key, std::uint64_t stream) noexcept;

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept;

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept;
  // Standard normal via Box-Muller; consumes whole blocks deterministically.
  double normal() noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t stream() const noexcept { return stream_; }

 private:
  void refill() noexcept;

  std::uint64_t key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int used_ = 4;  // 32-bit words consumed from buffer_
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

// One Philox4x32-10 block; exposed for known-answer tests.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key) noexcept;

// Mixes a base seed with a sequence of integer tags into a new 64-bit key
// (SplitMix64 finalizer chained over the parts).
std::uint64_t derive_key(std::uint64_t base, std::initializer_list<std::uint64_t> parts) noexcept;

// Purpose tags keep streams of different subsystems apart even when the
// user supplies the same seed everywhere.
namespace stream_tag {
inline constexpr std::uint64_t kScene = 0x5343454e45ULL;
inline constexpr std::uint64_t kConfounderNoise = 0x434f4e464eULL;
inline constexpr std::uint64_t kTreatment = 0x5452454154ULL;
inline constexpr std::uint64_t kCovariates = 0x434f564152ULL;
inline constexpr std::uint64_t kInit = 0x494e4954ULL;
inline constexpr std::uint64_t kShuffle = 0x53485546ULL;
inline constexpr std::uint64_t kAugment = 0x41554721ULL;
inline constexpr std::uint64_t kGrid = 0x47524944ULL;
}  // namespace stream_tag

}  // namespace imgconf
