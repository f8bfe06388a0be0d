#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "imgconf/errors.hpp"
#include "imgconf/salience.hpp"
#include "test_util.hpp"

using namespace imgconf;

namespace {

PropensityModel random_linear(testutil::Rng& rng, std::size_t k, Shape shape) {
  PropensityModel m(ConvNetSpec::simulation(k), shape);
  for (double& p : m.parameters()) p = rng.normal();
  return m;
}

}  // namespace

TEST(Salience, ZeroModelGivesZeroMap) {
  testutil::Rng rng(1);
  const PropensityModel m(ConvNetSpec::simulation(3), {8, 8, 3});
  const Raster s = salience_map(m, testutil::random_raster(rng, 8, 8, 3));
  EXPECT_EQ(s.height(), 8u);
  EXPECT_EQ(s.width(), 8u);
  EXPECT_EQ(s.channels(), 1u);
  for (double v : s.data()) EXPECT_EQ(v, 0.0);
}

TEST(Salience, SingleChannelIsAbsoluteGradient) {
  testutil::Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const auto m = random_linear(rng, 3, {8, 8, 1});
    const Raster x = testutil::random_raster(rng, 8, 8, 1);
    const Raster g = gradient_wrt_input(m, x);
    const Raster s = salience_map(m, x);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(s.data()[i], std::abs(g.data()[i]));
  }
}

TEST(Salience, SquaredMapMatchesFiniteDifferences) {
  testutil::Rng rng(3);
  const auto m = random_linear(rng, 3, {8, 8, 2});
  const Raster x = testutil::random_raster(rng, 8, 8, 2);
  const Raster s = salience_map(m, x);
  const double h = 1e-4;
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      double sq = 0.0;
      for (std::size_t c = 0; c < 2; ++c) {
        Raster xp = x, xm = x;
        xp.at(i, j, c) += h;
        xm.at(i, j, c) -= h;
        const double d = (forward(m, xp) - forward(m, xm)) / (2 * h);
        sq += d * d;
      }
      EXPECT_NEAR(s.at(i, j) * s.at(i, j), sq, 1e-6);
    }
}

TEST(Salience, NonNegativeForDeepModels) {
  testutil::Rng rng(4);
  auto m = PropensityModel::initialized(ConvNetSpec::application(3), {24, 24, 3}, 9);
  for (std::size_t i = 0; i < m.block("head.weight").size; ++i)
    m.parameters()[m.block("head.weight").offset + i] = rng.normal();
  const Raster s = salience_map(m, testutil::random_raster(rng, 24, 24, 3));
  double total = 0.0;
  for (double v : s.data()) {
    EXPECT_GE(v, 0.0);
    total += v;
  }
  EXPECT_GT(total, 0.0);
}

TEST(Salience, IgnoredChannelLeavesMapUnchanged) {
  testutil::Rng rng(5);
  const auto one = random_linear(rng, 3, {8, 8, 1});
  PropensityModel two(ConvNetSpec::simulation(3), {8, 8, 2});
  // Weights are laid out [filter][row][col][channel]; channel 1 stays zero.
  const auto w1 = one.block("conv0.weight");
  const auto w2 = two.block("conv0.weight");
  for (std::size_t t = 0; t < 9; ++t) two.parameters()[w2.offset + 2 * t] = one.parameters()[w1.offset + t];
  for (const char* name : {"conv0.bias", "head.weight", "head.bias"}) {
    two.parameters()[two.block(name).offset] = one.parameters()[one.block(name).offset];
  }
  const Raster x = testutil::random_raster(rng, 8, 8, 1);
  Raster x2(8, 8, 2);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      x2.at(i, j, 0) = x.at(i, j);
      x2.at(i, j, 1) = rng.normal();
    }
  EXPECT_DOUBLE_EQ(forward(one, x), forward(two, x2));
  const Raster a = salience_map(one, x), b = salience_map(two, x2);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
}

TEST(Salience, ShapeMismatchThrows) {
  const PropensityModel m(ConvNetSpec::simulation(3), {8, 8, 1});
  EXPECT_THROW(salience_map(m, Raster(8, 8, 2)), InvalidArgument);
}

TEST(MinmaxNormalized, MapsOntoUnitInterval) {
  const Raster s(2, 2, 1, {1.0, 3.0, 2.0, 5.0});
  const Raster n = minmax_normalized(s);
  EXPECT_EQ(n.data()[0], 0.0);
  EXPECT_EQ(n.data()[1], 0.5);
  EXPECT_EQ(n.data()[2], 0.25);
  EXPECT_EQ(n.data()[3], 1.0);
  const Raster flat = minmax_normalized(Raster(3, 3, 1, std::vector<double>(9, 4.0)));
  for (double v : flat.data()) EXPECT_EQ(v, 0.0);
}

TEST(SalienceCsv, OneRowPerPixel) {
  std::ostringstream out;
  write_salience_csv(out, Raster(2, 2, 1, {0.0, 0.25, 1.5, 2.0}));
  EXPECT_EQ(out.str(), "h,w,value\n0,0,0\n0,1,0.25\n1,0,1.5\n1,1,2\n");
}
