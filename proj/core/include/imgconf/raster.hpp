#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "imgconf/rng.hpp"

namespace imgconf {

// Height x width x channels image tensor, row-major in (h, w, c) order.
//
// Used both for observed scenes and for intermediate feature maps of the
// propensity networks. Values are finite for every raster produced by this
// library; the checked constructor enforces it for external data.
class Raster {
 public:
  Raster() = default;
  // Zero-filled.
  Raster(std::size_t height, std::size_t width, std::size_t channels);
  // Takes ownership of `data`; throws InvalidArgument on a size mismatch or
  // a non-finite value.
  Raster(std::size_t height, std::size_t width, std::size_t channels,
         std::vector<double> data);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t index(std::size_t h, std::size_t w, std::size_t c = 0) const noexcept {
    return (h * width_ + w) * channels_ + c;
  }
  double at(std::size_t h, std::size_t w, std::size_t c = 0) const noexcept {
    return data_[index(h, w, c)];
  }
  double& at(std::size_t h, std::size_t w, std::size_t c = 0) noexcept {
    return data_[index(h, w, c)];
  }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  bool same_shape(const Raster& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ &&
           channels_ == other.channels_;
  }
  bool all_finite() const noexcept;

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> data_;
};

// Parameters of the synthetic scene generator: per-channel white noise
// smoothed by a separable Gaussian of standard deviation
// `correlation_length` pixels, scaled so each pixel has standard deviation
// `amplitude`.
struct SynthParams {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  double correlation_length = 2.0;
  double amplitude = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

// Deterministic in (params, index).
Raster synth_scene(const SynthParams& params, std::uint64_t index);

// Output size along one axis: ceil(factor * n), at least 1.
std::size_t downsampled_extent(std::size_t n, double factor);

// Area-weighted resampling onto a ceil(factor*H) x ceil(factor*W) grid.
// Each output pixel averages the source pixels its footprint overlaps,
// weighted by overlap area. factor must lie in (0, 1].
Raster downsample(const Raster& r, double factor);

// Reverses the height axis and/or the width axis.
Raster flip(const Raster& r, bool flip_height, bool flip_width);
// Flips each spatial axis independently with probability 1/2.
Raster random_flip(const Raster& r, Philox& rng);

// Raster file format: ASCII header "RASTER 1 <H> <W> <C>\n" followed by
// H*W*C little-endian float32 values in (h, w, c) order.
void write_raster(std::ostream& out, const Raster& r);
Raster read_raster(std::istream& in);
void save_raster(const Raster& r, const std::filesystem::path& path);
Raster load_raster(const std::filesystem::path& path);

}  // namespace imgconf
