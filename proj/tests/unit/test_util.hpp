#pragma once

// Test-side helpers and oracles. Nothing here calls into the code under test
// except for the Raster container itself.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "imgconf/raster.hpp"

namespace testutil {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(eng_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(eng_); }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(eng_);
  }
  int bit() { return static_cast<int>(index(2)); }

 private:
  std::mt19937_64 eng_;
};

inline imgconf::Raster random_raster(Rng& rng, std::size_t h, std::size_t w, std::size_t c) {
  std::vector<double> v(h * w * c);
  for (double& x : v) x = rng.normal();
  return imgconf::Raster(h, w, c, std::move(v));
}

// Output pixel i covers source interval [i*s, (i+1)*s) with s = n / n_out;
// average of the source weighted by exact overlap area.
inline imgconf::Raster area_downsample_oracle(const imgconf::Raster& r, std::size_t oh,
                                              std::size_t ow) {
  const double sh = double(r.height()) / double(oh), sw = double(r.width()) / double(ow);
  auto overlap = [](double a0, double a1, double b0, double b1) {
    return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
  };
  imgconf::Raster out(oh, ow, r.channels());
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t c = 0; c < r.channels(); ++c) {
        double acc = 0.0;
        for (std::size_t y = 0; y < r.height(); ++y)
          for (std::size_t x = 0; x < r.width(); ++x) {
            const double a = overlap(i * sh, (i + 1) * sh, y, y + 1.0) *
                             overlap(j * sw, (j + 1) * sw, x, x + 1.0);
            acc += a * r.at(y, x, c);
          }
        out.at(i, j, c) = acc / (sh * sw);
      }
  return out;
}

// Quadruple loop over output position and filter window.
inline imgconf::Raster conv_oracle(const imgconf::Raster& r, const imgconf::Raster& f) {
  const std::size_t k = f.height();
  imgconf::Raster out(r.height() - k + 1, r.width() - k + 1, 1);
  for (std::size_t i = 0; i < out.height(); ++i)
    for (std::size_t j = 0; j < out.width(); ++j) {
      double acc = 0.0;
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b)
          for (std::size_t c = 0; c < r.channels(); ++c) acc += r.at(i + a, j + b, c) * f.at(a, b, c);
      out.at(i, j) = acc;
    }
  return out;
}

inline double max_oracle(const imgconf::Raster& m) {
  double best = m.data()[0];
  for (double v : m.data())
    if (v > best) best = v;
  return best;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Relative error used by the gradient checks: scaled by the larger of the
// two values, with a floor tied to the largest gradient component so that
// near-zero entries do not dominate.
inline double rel_err(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace testutil
