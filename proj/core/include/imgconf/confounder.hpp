#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "imgconf/raster.hpp"

namespace imgconf {

// k x k x C weight pattern with k odd. Stored as a Raster so filters share
// the raster file format.
class KernelFilter {
 public:
  explicit KernelFilter(Raster weights);

  std::size_t width() const noexcept { return weights_.height(); }
  std::size_t channels() const noexcept { return weights_.channels(); }
  const Raster& weights() const noexcept { return weights_; }

  // Ones on the main diagonal of every channel, zeros elsewhere.
  static KernelFilter diagonal(std::size_t width, std::size_t channels = 1);

 private:
  Raster weights_;
};

struct ConfounderSpec {
  KernelFilter filter = KernelFilter::diagonal(9);
  // Standard deviation of the per-pixel noise added to the similarity map.
  double noise_sigma = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
};

// Pixel neighbourhood of (w, h): {w-z/2..w+z/2} x {h-z/2..h+z/2} (integer
// division) clipped to [0, W) x [0, H). Returned sorted by (w, h).
std::vector<std::pair<std::size_t, std::size_t>> neighborhood_indices(
    std::size_t w, std::size_t h, std::size_t z, std::size_t bound_w, std::size_t bound_h);

// Valid cross-correlation, stride 1, no bias. Output is (H-k+1) x (W-k+1) x 1.
Raster convolve_valid(const Raster& r, const KernelFilter& f);

// Maximum of a single-channel map.
double global_max_pool(const Raster& m);

// Affine map to sample mean 0 and population standard deviation 1.
// Throws DegenerateData for constant input and InvalidArgument for n < 2.
std::vector<double> normalize_gn(std::span<const double> values);

// Per-scene max-pooled similarity before cross-scene normalisation. With
// noise_sigma > 0 every similarity-map pixel of scene s receives
// N(0, noise_sigma^2) noise drawn from the stream (spec.seed, s).
std::vector<double> pooled_similarities(std::span<const Raster> rasters,
                                        const ConfounderSpec& spec);

// normalize_gn(pooled_similarities(...)).
std::vector<double> scene_confounders(std::span<const Raster> rasters,
                                      const ConfounderSpec& spec);

}  // namespace imgconf
