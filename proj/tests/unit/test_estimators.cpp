#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "imgconf/dgp.hpp"
#include "imgconf/errors.hpp"
#include "imgconf/estimators.hpp"
#include "imgconf/rng.hpp"
#include "test_util.hpp"

using namespace imgconf;

namespace {

double clamp(double p) { return std::clamp(p, 0.01, 0.99); }

double ht_oracle(const std::vector<int>& t, const std::vector<double>& y, const std::vector<double>& pi) {
  double acc = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double p = clamp(pi[i]);
    acc += t[i] ? y[i] / p : -y[i] / (1 - p);
  }
  return acc / double(t.size());
}

double hajek_oracle(const std::vector<int>& t, const std::vector<double>& y, const std::vector<double>& pi) {
  double n1 = 0, d1 = 0, n0 = 0, d0 = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double p = clamp(pi[i]);
    if (t[i]) {
      n1 += y[i] / p;
      d1 += 1 / p;
    } else {
      n0 += y[i] / (1 - p);
      d0 += 1 / (1 - p);
    }
  }
  return n1 / d1 - n0 / d0;
}

struct Instance {
  std::vector<int> t;
  std::vector<double> y, pi;
};

Instance random_instance(testutil::Rng& rng, std::size_t n) {
  Instance in;
  for (std::size_t i = 0; i < n; ++i) {
    in.t.push_back(i < 2 ? int(i) : rng.bit());
    in.y.push_back(3.0 * rng.normal());
    in.pi.push_back(rng.uniform());
  }
  return in;
}

}  // namespace

TEST(DiffInMeans, HandExamples) {
  EXPECT_DOUBLE_EQ(diff_in_means(std::vector<int>{1, 1, 0}, std::vector<double>{2, 4, 1}), 2.0);
  EXPECT_EQ(diff_in_means(std::vector<int>{1, 0, 0}, std::vector<double>{5, 5, 5}), 0.0);
  const std::vector<int> t{1, 1, 0, 0, 0};
  const std::vector<double> y{4, 6, 1, 2, 3};
  EXPECT_DOUBLE_EQ(diff_in_means(t, y), 3.0);
}

TEST(IpwHt, HandExample) {
  const std::vector<int> t{1, 0};
  const std::vector<double> y{3, 1};
  const std::vector<double> pi{0.5, 0.5};
  EXPECT_EQ(ipw_ht(t, y, pi), 2.0);
  EXPECT_EQ(ipw_ht(t, std::vector<double>{0, 0}, std::vector<double>{0.3, 0.9}), 0.0);
  EXPECT_EQ(ipw_hajek(t, y, std::vector<double>{0.8, 0.8}), 2.0);
}

TEST(IpwHajek, HandExample) {
  // Treated weights 1/0.8 and 1/0.4; control weights 1/0.5 and 1/0.75.
  const std::vector<int> t{1, 1, 0, 0};
  const std::vector<double> y{1, 3, 2, 6};
  const std::vector<double> pi{0.8, 0.4, 0.5, 0.25};
  EXPECT_NEAR(ipw_hajek(t, y, pi), 7.0 / 3.0 - 18.0 / 5.0, 1e-14);
  EXPECT_NEAR(ipw_ht(t, y, pi), (1 / 0.8 + 3 / 0.4 - 2 / 0.5 - 6 / 0.75) / 4, 1e-14);
}

TEST(Estimators, MatchLoopOracles) {
  testutil::Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto in = random_instance(rng, 2 + rng.index(60));
    EXPECT_NEAR(ipw_ht(in.t, in.y, in.pi), ht_oracle(in.t, in.y, in.pi), 1e-9);
    EXPECT_NEAR(ipw_hajek(in.t, in.y, in.pi), hajek_oracle(in.t, in.y, in.pi), 1e-9);
  }
}

TEST(Estimators, ConstantPropensityHajekIsDiffInMeans) {
  testutil::Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    auto in = random_instance(rng, 2 + rng.index(200));
    const double c = 0.05 + 0.9 * rng.uniform();
    std::fill(in.pi.begin(), in.pi.end(), c);
    EXPECT_NEAR(ipw_hajek(in.t, in.y, in.pi), diff_in_means(in.t, in.y), 1e-10);
  }
}

TEST(Estimators, HtIsDiffInMeansOnBalancedHalfInstances) {
  testutil::Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t half = 1 + rng.index(30);
    std::vector<int> t;
    std::vector<double> y;
    for (std::size_t i = 0; i < 2 * half; ++i) {
      t.push_back(i < half);
      y.push_back(rng.normal());
    }
    const std::vector<double> pi(t.size(), 0.5);
    EXPECT_NEAR(ipw_ht(t, y, pi), diff_in_means(t, y), 1e-12);
  }
}

TEST(Estimators, HajekIgnoresGroupwiseRescalingOfWeights) {
  // Scaling every treated propensity by 1.5 scales every treated weight by
  // the same factor, which normalisation removes.
  const std::vector<int> t{1, 1, 1, 0, 0};
  const std::vector<double> y{2, 5, -1, 0.5, 4};
  const std::vector<double> pi{0.2, 0.4, 0.5, 0.3, 0.6};
  std::vector<double> scaled = pi;
  for (int i = 0; i < 3; ++i) scaled[i] = pi[i] * 1.5;
  EXPECT_NEAR(ipw_hajek(t, y, scaled), ipw_hajek(t, y, pi), 1e-14);
}

TEST(Estimators, ClippingIsApplied) {
  const std::vector<int> t{1, 0};
  const std::vector<double> y{1, 1};
  const std::vector<double> pi{0.0, 1.0};
  EXPECT_NEAR(ipw_ht(t, y, pi), 0.5 * (1 / 0.01 - 1 / 0.01), 1e-12);
  const std::vector<double> pi2{0.001, 0.5};
  EXPECT_NEAR(ipw_ht(t, y, pi2, Clip{0.1, 0.9}), 0.5 * (10 - 2), 1e-12);
  EXPECT_THROW(ipw_ht(t, y, pi, Clip{0.0, 0.9}), InvalidArgument);
  EXPECT_THROW(ipw_ht(t, y, pi, Clip{0.6, 0.4}), InvalidArgument);
  EXPECT_THROW(ipw_ht(t, y, pi, Clip{0.1, 1.0}), InvalidArgument);
}

TEST(Estimators, InputErrors) {
  const std::vector<int> t{1, 0, 1};
  const std::vector<double> y{1, 2, 3};
  const std::vector<double> pi{0.5, 0.5, 0.5};
  const std::vector<double> short_y{1, 2};
  EXPECT_THROW(diff_in_means(t, short_y), InvalidArgument);
  EXPECT_THROW(ipw_hajek(t, y, short_y), InvalidArgument);
  const std::vector<int> bad{1, 0, 2};
  EXPECT_THROW(ipw_ht(bad, y, pi), InvalidArgument);
  const std::vector<double> bad_pi{0.5, 1.5, 0.5};
  EXPECT_THROW(ipw_ht(t, y, bad_pi), InvalidArgument);
  const std::vector<int> all_treated{1, 1, 1};
  EXPECT_THROW(diff_in_means(all_treated, y), DegenerateData);
  EXPECT_THROW(ipw_hajek(all_treated, y, pi), DegenerateData);
  // HT needs no group means, so a single group is still an estimate.
  EXPECT_NO_THROW(ipw_ht(all_treated, y, pi));
}

TEST(Balance, FourUnitHandCalculation) {
  const std::vector<int> t{1, 1, 0, 0};
  const std::vector<std::vector<double>> x{{1, 0}, {3, 1}, {2, 1}, {6, 0}};
  const std::vector<double> pi{0.8, 0.4, 0.5, 0.25};
  const Balance b = balance_diagnostics(t, x, pi);
  ASSERT_EQ(b.raw_diff.size(), 2u);
  EXPECT_NEAR(b.raw_diff[0], -2.0, 1e-12);
  EXPECT_NEAR(b.raw_diff[1], 0.0, 1e-12);
  // Treated: (1.25 * 1 + 2.5 * 3) / 3.75 = 7/3; control: (2 * 2 + 4/3 * 6) / (10/3) = 18/5.
  EXPECT_NEAR(b.weighted_diff[0], 7.0 / 3.0 - 18.0 / 5.0, 1e-12);
  // Treated: 2.5 / 3.75 = 2/3; control: 2 / (10/3) = 3/5.
  EXPECT_NEAR(b.weighted_diff[1], 2.0 / 3.0 - 3.0 / 5.0, 1e-12);
}

TEST(Balance, HalfPropensityReproducesRawDifference) {
  testutil::Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng.index(40);
    std::vector<int> t;
    std::vector<std::vector<double>> x;
    for (std::size_t i = 0; i < n; ++i) {
      t.push_back(i < 2 ? int(i) : rng.bit());
      x.push_back({rng.normal(), 10 * rng.uniform()});
    }
    const std::vector<double> pi(n, 0.5);
    const Balance b = balance_diagnostics(t, x, pi);
    EXPECT_EQ(b.weighted_diff, b.raw_diff);
  }
}

TEST(Balance, Errors) {
  const std::vector<int> t{1, 0};
  const std::vector<std::vector<double>> ragged{{1, 2}, {3}};
  const std::vector<double> pi{0.5, 0.5};
  EXPECT_THROW(balance_diagnostics(t, ragged, pi), InvalidArgument);
  const std::vector<std::vector<double>> short_x{{1}};
  EXPECT_THROW(balance_diagnostics(t, short_x, pi), InvalidArgument);
}

TEST(Estimators, OraclePropensitiesRemoveConfoundingBias) {
  // Large-sample check on the simulated mechanism: with the true propensities
  // the weighted contrast is centred on tau while the naive contrast is not.
  Philox rng(11, 0);
  DGPConfig cfg;
  std::vector<int> t;
  std::vector<double> y, p;
  for (int i = 0; i < 200000; ++i) {
    const double u = rng.normal();
    const Assignment a = assign_treatment(u, cfg, rng);
    t.push_back(a.t);
    p.push_back(a.p_true);
    y.push_back(generate_outcome(u, a.t, cfg, rng));
  }
  EXPECT_NEAR(ipw_hajek(t, y, p), cfg.tau, 0.05);
  EXPECT_GT(diff_in_means(t, y) - cfg.tau, 1.0);
}
