#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "imgconf/errors.hpp"
#include "imgconf/raster.hpp"
#include "test_util.hpp"

using namespace imgconf;

TEST(Raster, ZeroFilledAndIndexing) {
  Raster r(2, 3, 2);
  EXPECT_EQ(r.size(), 12u);
  for (double v : r.data()) EXPECT_EQ(v, 0.0);
  r.at(1, 2, 1) = 5.0;
  EXPECT_EQ(r.data()[(1 * 3 + 2) * 2 + 1], 5.0);
}

TEST(Raster, CheckedConstructorRejectsBadData) {
  EXPECT_THROW(Raster(2, 2, 1, {1, 2, 3}), InvalidArgument);
  EXPECT_THROW(Raster(1, 1, 1, {std::numeric_limits<double>::quiet_NaN()}), InvalidArgument);
  EXPECT_THROW(Raster(1, 2, 1, {1.0, std::numeric_limits<double>::infinity()}), InvalidArgument);
  EXPECT_NO_THROW(Raster(1, 2, 1, {1.0, -2.0}));
}

TEST(SynthScene, DeterministicInSeedAndIndex) {
  SynthParams p;
  EXPECT_EQ(synth_scene(p, 0), synth_scene(p, 0));
  EXPECT_NE(synth_scene(p, 0), synth_scene(p, 1));
  SynthParams q = p;
  q.seed = 2;
  EXPECT_NE(synth_scene(p, 0), synth_scene(q, 0));
}

TEST(SynthScene, ShapeFinitenessAndScale) {
  SynthParams p;
  p.height = 40;
  p.width = 24;
  p.channels = 2;
  double sq = 0.0;
  std::size_t n = 0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const Raster r = synth_scene(p, i);
    ASSERT_EQ(r.height(), 40u);
    ASSERT_EQ(r.width(), 24u);
    ASSERT_EQ(r.channels(), 2u);
    ASSERT_TRUE(r.all_finite());
    for (double v : r.data()) sq += v * v;
    n += r.size();
  }
  // Per-pixel standard deviation equals the amplitude.
  EXPECT_NEAR(std::sqrt(sq / n), 1.0, 0.05);
}

TEST(SynthScene, SmallAmplitudeShrinksValues) {
  SynthParams p;
  p.amplitude = 1e-9;
  const Raster r = synth_scene(p, 3);
  for (double v : r.data()) EXPECT_LT(std::abs(v), 1e-7);
}

TEST(SynthScene, NeighboursAreCorrelated) {
  SynthParams p;
  p.height = p.width = 64;
  p.correlation_length = 3.0;
  const Raster r = synth_scene(p, 0);
  double num = 0.0, den = 0.0;
  for (std::size_t h = 0; h < 64; ++h)
    for (std::size_t w = 0; w + 1 < 64; ++w) {
      num += r.at(h, w) * r.at(h, w + 1);
      den += r.at(h, w) * r.at(h, w);
    }
  EXPECT_GT(num / den, 0.8);
}

TEST(SynthParams, Validation) {
  SynthParams p;
  p.correlation_length = 0.5;
  EXPECT_THROW(p.validate(), InvalidArgument);
  p = {};
  p.amplitude = 0.0;
  EXPECT_THROW(p.validate(), InvalidArgument);
  p = {};
  p.height = 0;
  EXPECT_THROW(p.validate(), InvalidArgument);
}

TEST(Downsample, FactorOneIsIdentity) {
  const Raster r = synth_scene(SynthParams{}, 4);
  EXPECT_EQ(downsample(r, 1.0), r);
}

TEST(Downsample, ExactBlockMean) {
  const Raster r(2, 2, 1, {1, 2, 3, 4});
  const Raster d = downsample(r, 0.5);
  ASSERT_EQ(d.height(), 1u);
  ASSERT_EQ(d.width(), 1u);
  EXPECT_DOUBLE_EQ(d.at(0, 0), 2.5);
}

TEST(Downsample, ConstantFieldIsInvariant) {
  const Raster r(3, 3, 1, std::vector<double>(9, 7.0));
  const Raster d = downsample(r, 0.4);
  ASSERT_EQ(d.height(), 2u);
  ASSERT_EQ(d.width(), 2u);
  for (double v : d.data()) EXPECT_DOUBLE_EQ(v, 7.0);
}

TEST(Downsample, RejectsFactorsOutsideUnitInterval) {
  const Raster r(4, 4, 1);
  EXPECT_THROW(downsample(r, 0.0), InvalidArgument);
  EXPECT_THROW(downsample(r, -0.5), InvalidArgument);
  EXPECT_THROW(downsample(r, 1.5), InvalidArgument);
  EXPECT_THROW(downsample(r, std::numeric_limits<double>::quiet_NaN()), InvalidArgument);
}

TEST(Downsample, Extents) {
  EXPECT_EQ(downsampled_extent(32, 0.12), 4u);
  EXPECT_EQ(downsampled_extent(64, 0.12), 8u);
  EXPECT_EQ(downsampled_extent(56, 0.12), 7u);
  EXPECT_EQ(downsampled_extent(32, 0.5), 16u);
  EXPECT_EQ(downsampled_extent(3, 0.4), 2u);
  EXPECT_EQ(downsampled_extent(5, 0.01), 1u);
  EXPECT_EQ(downsampled_extent(25, 0.2), 5u);
}

TEST(Downsample, MatchesOverlapAreaOracle) {
  testutil::Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t H = 3 + rng.index(14), W = 3 + rng.index(14), C = 1 + rng.index(3);
    const double factor = 0.05 + 0.95 * rng.uniform();
    const Raster r = testutil::random_raster(rng, H, W, C);
    const Raster got = downsample(r, factor);
    const Raster want = testutil::area_downsample_oracle(r, downsampled_extent(H, factor),
                                                         downsampled_extent(W, factor));
    ASSERT_TRUE(got.same_shape(want));
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_NEAR(got.data()[i], want.data()[i], 1e-9) << "trial " << trial;
    }
  }
}

TEST(Downsample, PreservesGlobalMeanOnIntegerGrids) {
  testutil::Rng rng(12);
  const std::pair<std::size_t, double> cases[] = {{32, 0.5}, {32, 0.25}, {40, 0.2}, {30, 0.1}};
  for (const auto& [n, factor] : cases) {
    const Raster r = testutil::random_raster(rng, n, n, 2);
    const Raster d = downsample(r, factor);
    double a = 0.0, b = 0.0;
    for (double v : r.data()) a += v;
    for (double v : d.data()) b += v;
    a /= r.size();
    b /= d.size();
    EXPECT_NEAR(b, a, 1e-6 * std::max(1.0, std::abs(a)));
  }
}

TEST(Flip, AxisReversal) {
  const Raster r(2, 2, 1, {1, 2, 3, 4});
  EXPECT_EQ(flip(r, false, false), r);
  EXPECT_EQ(flip(r, true, false), Raster(2, 2, 1, {3, 4, 1, 2}));
  EXPECT_EQ(flip(r, false, true), Raster(2, 2, 1, {2, 1, 4, 3}));
  EXPECT_EQ(flip(r, true, true), Raster(2, 2, 1, {4, 3, 2, 1}));
}

TEST(Flip, ChannelsNeverReordered) {
  const Raster r(1, 2, 2, {1, 2, 3, 4});
  EXPECT_EQ(flip(r, false, true), Raster(1, 2, 2, {3, 4, 1, 2}));
}

TEST(Flip, Involution) {
  const Raster r = synth_scene(SynthParams{}, 2);
  for (bool fh : {false, true})
    for (bool fw : {false, true}) EXPECT_EQ(flip(flip(r, fh, fw), fh, fw), r);
}

TEST(RandomFlip, PreservesMultisetAndUsesAllFourOutcomes) {
  const Raster r(3, 3, 1, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  std::vector<double> sorted(r.data().begin(), r.data().end());
  int seen[2][2] = {};
  Philox rng(77, 0);
  for (int i = 0; i < 200; ++i) {
    const Raster f = random_flip(r, rng);
    std::vector<double> v(f.data().begin(), f.data().end());
    std::sort(v.begin(), v.end());
    ASSERT_EQ(v, sorted);
    for (bool fh : {false, true})
      for (bool fw : {false, true})
        if (f == flip(r, fh, fw)) ++seen[fh][fw];
  }
  for (auto& row : seen)
    for (int n : row) EXPECT_GT(n, 20);
}

TEST(RasterIO, RoundTripAtFloatPrecision) {
  const Raster r = synth_scene(SynthParams{}, 9);
  std::stringstream ss;
  write_raster(ss, r);
  const Raster back = read_raster(ss);
  ASSERT_TRUE(back.same_shape(r));
  for (std::size_t i = 0; i < r.size(); ++i) {
    EXPECT_EQ(back.data()[i], static_cast<double>(static_cast<float>(r.data()[i])));
  }
  std::stringstream again;
  write_raster(again, back);
  EXPECT_EQ(read_raster(again), back);
}

TEST(RasterIO, SingleZeroPixelByteLayout) {
  std::stringstream ss;
  write_raster(ss, Raster(1, 1, 1));
  const std::string bytes = ss.str();
  const std::string header = "RASTER 1 1 1 1\n";
  ASSERT_EQ(bytes.size(), header.size() + 4);
  EXPECT_EQ(bytes.substr(0, header.size()), header);
  EXPECT_EQ(bytes.substr(header.size()), std::string(4, '\0'));
}

TEST(RasterIO, LittleEndianPayload) {
  std::stringstream ss;
  write_raster(ss, Raster(1, 1, 1, {1.0}));
  const std::string bytes = ss.str();
  // 1.0f = 0x3f800000
  EXPECT_EQ(bytes.substr(bytes.size() - 4), std::string("\x00\x00\x80\x3f", 4));
}

namespace {

std::string read_error(const std::string& bytes) {
  std::stringstream ss(bytes);
  try {
    read_raster(ss);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(RasterIO, MalformedInputsNameTheField) {
  EXPECT_NE(read_error("RASTR 1 1 1 1\n" + std::string(4, '\0')).find("magic"), std::string::npos);
  EXPECT_NE(read_error("RASTER 2 1 1 1\n" + std::string(4, '\0')).find("version"),
            std::string::npos);
  EXPECT_NE(read_error("RASTER 1 0 1 1\n").find("height"), std::string::npos);
  EXPECT_NE(read_error("RASTER 1 1 x 1\n").find("width"), std::string::npos);
  EXPECT_NE(read_error("RASTER 1 1 1 -3\n").find("channels"), std::string::npos);
  EXPECT_NE(read_error("RASTER 1 2 2 1\n" + std::string(8, '\0')).find("truncated"),
            std::string::npos);
  EXPECT_NE(read_error("RASTER 1 1 1 1\n" + std::string(8, '\0')).find("trailing"),
            std::string::npos);
  EXPECT_NE(read_error("RASTER 1 1 1 1\n" + std::string("\x00\x00\xc0\x7f", 4)).find("finite"),
            std::string::npos);
}

TEST(RasterIO, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "imgconf_test_raster.bin";
  const Raster r(2, 3, 1, {0.5, -1, 2, 3.25, 0, 1e3});
  save_raster(r, path);
  EXPECT_EQ(load_raster(path), r);
  std::filesystem::remove(path);
  EXPECT_THROW(load_raster(path), FormatError);
}
