#pragma once

#include <iosfwd>

#include "imgconf/propensity.hpp"
#include "imgconf/raster.hpp"

namespace imgconf {

// S[h, w] = || d forward(model, r) / d r[h, w, :] ||_2, an H x W x 1 raster.
Raster salience_map(const PropensityModel& model, const Raster& r);

// Presentation-only rescaling of a map onto [0, 1]. A constant map becomes
// all zeros.
Raster minmax_normalized(const Raster& s);

// "h,w,value" rows for plotting, channel 0 only.
void write_salience_csv(std::ostream& out, const Raster& s);

}  // namespace imgconf
