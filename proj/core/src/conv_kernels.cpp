#include "conv_kernels.hpp"

#include <algorithm>

namespace imgconf::detail {

void correlate_valid(const Raster& in, const double* weights, std::size_t k,
                     std::size_t out_channels, const double* bias, Raster& out) {
  const std::size_t C = in.channels();
  const std::size_t W = in.width();
  const std::size_t oh = out.height(), ow = out.width();
  const double* src = in.data().data();
  double* dst = out.data().data();

  if (C == 1 && out_channels == 1) {
    // Tiles of kTile outputs along w stay in registers across all k*k taps.
    constexpr std::size_t kTile = 32;
    const double b0 = bias ? bias[0] : 0.0;
    for (std::size_t i = 0; i < oh; ++i) {
      double* orow = dst + i * ow;
      std::size_t j0 = 0;
      for (; j0 + kTile <= ow; j0 += kTile) {
        double acc[kTile];
        for (std::size_t t = 0; t < kTile; ++t) acc[t] = b0;
        for (std::size_t di = 0; di < k; ++di) {
          const double* irow = src + (i + di) * W + j0;
          for (std::size_t dj = 0; dj < k; ++dj) {
            const double wv = weights[di * k + dj];
            for (std::size_t t = 0; t < kTile; ++t) acc[t] += wv * irow[dj + t];
          }
        }
        std::copy(acc, acc + kTile, orow + j0);
      }
      const std::size_t rest = ow - j0;
      if (rest == 0) continue;
      double acc[kTile];
      for (std::size_t t = 0; t < rest; ++t) acc[t] = b0;
      for (std::size_t di = 0; di < k; ++di) {
        const double* irow = src + (i + di) * W + j0;
        for (std::size_t dj = 0; dj < k; ++dj) {
          const double wv = weights[di * k + dj];
          for (std::size_t t = 0; t < rest; ++t) acc[t] += wv * irow[dj + t];
        }
      }
      std::copy(acc, acc + rest, orow + j0);
    }
    return;
  }

  const std::size_t span = k * C;  // contiguous run of one kernel row
  for (std::size_t i = 0; i < oh; ++i) {
    for (std::size_t j = 0; j < ow; ++j) {
      double* o = dst + (i * ow + j) * out_channels;
      for (std::size_t f = 0; f < out_channels; ++f) {
        double acc = bias ? bias[f] : 0.0;
        const double* wf = weights + f * k * span;
        for (std::size_t di = 0; di < k; ++di) {
          const double* ip = src + ((i + di) * W + j) * C;
          const double* wp = wf + di * span;
          for (std::size_t t = 0; t < span; ++t) acc += ip[t] * wp[t];
        }
        o[f] = acc;
      }
    }
  }
}

}  // namespace imgconf::detail
