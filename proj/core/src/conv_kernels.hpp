#pragma once

// Shared inner loops for valid cross-correlation. Weight layout is
// [out_channel][kh][kw][in_channel], which for a single output channel is the
// same (h, w, c) order as a KernelFilter raster.

#include <cstddef>

#include "imgconf/raster.hpp"

namespace imgconf::detail {

// out must be (H-k+1) x (W-k+1) x out_channels. bias may be null.
void correlate_valid(const Raster& in, const double* weights, std::size_t k,
                     std::size_t out_channels, const double* bias, Raster& out);

}  // namespace imgconf::detail
