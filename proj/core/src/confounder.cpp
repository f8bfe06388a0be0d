#include "imgconf/confounder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "conv_kernels.hpp"
#include "imgconf/errors.hpp"

namespace imgconf {

KernelFilter::KernelFilter(Raster weights) : weights_(std::move(weights)) {
  if (weights_.empty()) throw InvalidArgument("kernel filter: empty weights");
  if (weights_.height() != weights_.width()) {
    throw InvalidArgument("kernel filter: weights must be square");
  }
  if (weights_.height() % 2 == 0) {
    throw InvalidArgument("kernel filter: width must be odd, got " +
                          std::to_string(weights_.height()));
  }
  if (!weights_.all_finite()) throw InvalidArgument("kernel filter: non-finite weight");
}

KernelFilter KernelFilter::diagonal(std::size_t width, std::size_t channels) {
  Raster w(width, width, channels);
  for (std::size_t i = 0; i < width; ++i)
    for (std::size_t c = 0; c < channels; ++c) w.at(i, i, c) = 1.0;
  return KernelFilter(std::move(w));
}

void ConfounderSpec::validate() const {
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw InvalidArgument("confounder: noise_sigma must be a finite value >= 0");
  }
}

std::vector<std::pair<std::size_t, std::size_t>> neighborhood_indices(
    std::size_t w, std::size_t h, std::size_t z, std::size_t bound_w, std::size_t bound_h) {
  if (z == 0) throw InvalidArgument("neighborhood: z must be positive");
  if (w >= bound_w || h >= bound_h) {
    throw InvalidArgument("neighborhood: center (" + std::to_string(w) + ", " +
                          std::to_string(h) + ") outside " + std::to_string(bound_w) + "x" +
                          std::to_string(bound_h));
  }
  const std::size_t half = z / 2;
  const std::size_t w0 = w >= half ? w - half : 0;
  const std::size_t h0 = h >= half ? h - half : 0;
  const std::size_t w1 = std::min(bound_w - 1, w + half);
  const std::size_t h1 = std::min(bound_h - 1, h + half);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve((w1 - w0 + 1) * (h1 - h0 + 1));
  for (std::size_t a = w0; a <= w1; ++a)
    for (std::size_t b = h0; b <= h1; ++b) out.emplace_back(a, b);
  return out;
}

Raster convolve_valid(const Raster& r, const KernelFilter& f) {
  if (r.channels() != f.channels()) {
    throw InvalidArgument("convolve_valid: raster has " + std::to_string(r.channels()) +
                          " channels, filter has " + std::to_string(f.channels()));
  }
  const std::size_t k = f.width();
  if (r.height() < k || r.width() < k) {
    throw InvalidArgument("convolve_valid: filter width " + std::to_string(k) +
                          " exceeds raster " + std::to_string(r.height()) + "x" +
                          std::to_string(r.width()));
  }
  Raster out(r.height() - k + 1, r.width() - k + 1, 1);
  detail::correlate_valid(r, f.weights().data().data(), k, 1, nullptr, out);
  return out;
}

double global_max_pool(const Raster& m) {
  if (m.channels() != 1) {
    throw InvalidArgument("global_max_pool: expected 1 channel, got " +
                          std::to_string(m.channels()));
  }
  if (m.empty()) throw InvalidArgument("global_max_pool: empty raster");
  return *std::max_element(m.data().begin(), m.data().end());
}

std::vector<double> normalize_gn(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) throw InvalidArgument("normalize_gn: need at least 2 values");
  double mean = 0.0;
  double scale = 0.0;
  for (double v : values) {
    mean += v;
    scale = std::max(scale, std::abs(v));
  }
  mean /= static_cast<double>(n);
  // `mean` is rounded at the scale of the inputs, which can dwarf their
  // spread; centring the differences a second time removes that offset.
  std::vector<double> out(values.begin(), values.end());
  double resid = 0.0;
  for (double& d : out) {
    d -= mean;
    resid += d;
  }
  resid /= static_cast<double>(n);
  double ss = 0.0;
  for (double& d : out) {
    d -= resid;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (!(sd > 1e-14 * std::max(scale, 1e-300))) {
    throw DegenerateData("normalize_gn: zero variance across scenes");
  }
  for (double& d : out) d /= sd;
  return out;
}

std::vector<double> pooled_similarities(std::span<const Raster> rasters,
                                        const ConfounderSpec& spec) {
  spec.validate();
  std::vector<double> pooled(rasters.size());
  const std::uint64_t key = derive_key(spec.seed, {stream_tag::kConfounderNoise});
  for (std::size_t s = 0; s < rasters.size(); ++s) {
    Raster map = convolve_valid(rasters[s], spec.filter);
    if (spec.noise_sigma > 0.0) {
      Philox rng(key, s);
      for (double& v : map.data()) v += spec.noise_sigma * rng.normal();
    }
    pooled[s] = global_max_pool(map);
  }
  return pooled;
}

std::vector<double> scene_confounders(std::span<const Raster> rasters,
                                      const ConfounderSpec& spec) {
  if (rasters.size() < 2) throw InvalidArgument("scene_confounders: need at least 2 scenes");
  return normalize_gn(pooled_similarities(rasters, spec));
}

}  // namespace imgconf
