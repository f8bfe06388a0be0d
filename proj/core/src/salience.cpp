#include "imgconf/salience.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "imgconf/csv.hpp"

namespace imgconf {

Raster salience_map(const PropensityModel& model, const Raster& r) {
  const Raster g = gradient_wrt_input(model, r);
  Raster s(g.height(), g.width(), 1);
  for (std::size_t h = 0; h < g.height(); ++h)
    for (std::size_t w = 0; w < g.width(); ++w) {
      double sq = 0.0;
      for (std::size_t c = 0; c < g.channels(); ++c) sq += g.at(h, w, c) * g.at(h, w, c);
      s.at(h, w) = std::sqrt(sq);
    }
  return s;
}

Raster minmax_normalized(const Raster& s) {
  Raster out = s;
  if (s.empty()) return out;
  const auto [lo, hi] = std::minmax_element(s.data().begin(), s.data().end());
  const double range = *hi - *lo;
  for (double& v : out.data()) v = range > 0.0 ? (v - *lo) / range : 0.0;
  return out;
}

void write_salience_csv(std::ostream& out, const Raster& s) {
  out << "h,w,value\n";
  for (std::size_t h = 0; h < s.height(); ++h)
    for (std::size_t w = 0; w < s.width(); ++w)
      out << h << ',' << w << ',' << csv::format_double(s.at(h, w)) << '\n';
}

}  // namespace imgconf
